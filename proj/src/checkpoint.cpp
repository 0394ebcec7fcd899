#include "rgtrec/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "rgtrec/errors.hpp"

namespace rgtrec {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'G', 'T', 'R'};

template <typename V>
void put(std::ofstream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V take(std::ifstream& in, const std::filesystem::path& path) {
    V value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(V))) {
        throw DataError("checkpoint " + path.string() + " is truncated");
    }
    return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointBlock>& blocks) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write checkpoint " + path.string());
    }
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& block : blocks) {
        if (block.values.size() != ad::shape_size(block.shape)) {
            throw std::invalid_argument("checkpoint block '" + block.name + "' has " +
                                        std::to_string(block.values.size()) + " values for shape " +
                                        ad::shape_string(block.shape));
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(block.name.size()));
        out.write(block.name.data(), static_cast<std::streamsize>(block.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(block.shape.size()));
        for (const auto dim : block.shape) {
            put<std::uint64_t>(out, dim);
        }
        put<std::uint8_t>(out, block.element_size);
        if (block.element_size == 4) {
            for (const double v : block.values) {
                put<float>(out, static_cast<float>(v));
            }
        } else if (block.element_size == 8) {
            out.write(reinterpret_cast<const char*>(block.values.data()),
                      static_cast<std::streamsize>(block.values.size() * sizeof(double)));
        } else {
            throw std::invalid_argument("checkpoint element size must be 4 or 8");
        }
    }
    if (!out) {
        throw DataError("failed writing checkpoint " + path.string());
    }
}

std::vector<CheckpointBlock> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint " + path.string());
    }
    char magic[4];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw DataError(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = take<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
    }
    const auto count = take<std::uint32_t>(in, path);
    std::vector<CheckpointBlock> blocks(count);
    for (auto& block : blocks) {
        block.name.resize(take<std::uint32_t>(in, path));
        if (!in.read(block.name.data(), static_cast<std::streamsize>(block.name.size()))) {
            throw DataError("checkpoint " + path.string() + " is truncated");
        }
        block.shape.resize(take<std::uint32_t>(in, path));
        for (auto& dim : block.shape) {
            dim = static_cast<std::size_t>(take<std::uint64_t>(in, path));
        }
        block.element_size = take<std::uint8_t>(in, path);
        const std::size_t n = ad::shape_size(block.shape);
        block.values.resize(n);
        if (block.element_size == 4) {
            for (auto& v : block.values) {
                v = take<float>(in, path);
            }
        } else if (block.element_size == 8) {
            if (!in.read(reinterpret_cast<char*>(block.values.data()), static_cast<std::streamsize>(n * 8))) {
                throw DataError("checkpoint " + path.string() + " is truncated");
            }
        } else {
            throw DataError("checkpoint block '" + block.name + "' has element size " +
                            std::to_string(block.element_size));
        }
    }
    return blocks;
}

const CheckpointBlock& find_block(const std::vector<CheckpointBlock>& blocks, std::string_view name) {
    const auto it = std::find_if(blocks.begin(), blocks.end(), [name](const auto& b) { return b.name == name; });
    if (it == blocks.end()) {
        throw DataError("checkpoint has no block '" + std::string(name) + "'");
    }
    return *it;
}

namespace {

template <typename T>
CheckpointBlock make_block(std::string name, ad::Shape shape, std::span<const T> values) {
    CheckpointBlock block;
    block.name = std::move(name);
    block.shape = std::move(shape);
    block.element_size = sizeof(T);
    block.values.assign(values.begin(), values.end());
    return block;
}

template <typename T>
void fill(const CheckpointBlock& block, std::span<T> target) {
    if (block.values.size() != target.size()) {
        throw DataError("checkpoint block '" + block.name + "' holds " + std::to_string(block.values.size()) +
                        " values, expected " + std::to_string(target.size()));
    }
    std::transform(block.values.begin(), block.values.end(), target.begin(),
                   [](double v) { return static_cast<T>(v); });
}

}  // namespace

template <typename T>
void append_parameters(std::vector<CheckpointBlock>& blocks, const ad::ParameterSet<T>& params,
                       std::string_view prefix) {
    for (const auto& p : params.entries()) {
        blocks.push_back(make_block<T>(p.name, p.tensor.shape(), p.tensor.values()));
        blocks.push_back(make_block<T>(p.name + "/m", {p.first_moment.size()}, p.first_moment));
        blocks.push_back(make_block<T>(p.name + "/v", {p.second_moment.size()}, p.second_moment));
    }
    CheckpointBlock step;
    step.name = std::string(prefix) + "/step";
    step.shape = {1};
    step.values = {static_cast<double>(params.step())};
    blocks.push_back(std::move(step));
}

template <typename T>
void restore_parameters(const std::vector<CheckpointBlock>& blocks, ad::ParameterSet<T>& params,
                        std::string_view prefix) {
    for (auto& p : params.entries()) {
        const auto& tensor = find_block(blocks, p.name);
        if (tensor.shape != p.tensor.shape()) {
            throw DataError("checkpoint block '" + p.name + "' has shape " + ad::shape_string(tensor.shape) +
                            ", model expects " + ad::shape_string(p.tensor.shape()));
        }
        fill<T>(tensor, p.tensor.mutable_values());
        const auto& m = find_block(blocks, p.name + "/m");
        const auto& v = find_block(blocks, p.name + "/v");
        p.first_moment.resize(m.values.size());
        p.second_moment.resize(v.values.size());
        fill<T>(m, std::span<T>(p.first_moment));
        fill<T>(v, std::span<T>(p.second_moment));
    }
    params.set_step(static_cast<std::uint64_t>(find_block(blocks, std::string(prefix) + "/step").values.at(0)));
}

template void append_parameters<float>(std::vector<CheckpointBlock>&, const ad::ParameterSet<float>&,
                                       std::string_view);
template void append_parameters<double>(std::vector<CheckpointBlock>&, const ad::ParameterSet<double>&,
                                        std::string_view);
template void restore_parameters<float>(const std::vector<CheckpointBlock>&, ad::ParameterSet<float>&,
                                        std::string_view);
template void restore_parameters<double>(const std::vector<CheckpointBlock>&, ad::ParameterSet<double>&,
                                         std::string_view);

}  // namespace rgtrec
