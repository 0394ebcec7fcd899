#pragma once

// Binary checkpoint: "RGTR", u32 format version, u32 block count, then
// blocks of
//   u32 name length, name bytes, u32 rank, u64 dims[rank],
//   u8 element size (4 or 8), row-major little-endian values.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rgtrec/tensor.hpp"

namespace rgtrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
    std::string name;
    ad::Shape shape;
    std::uint8_t element_size = 8;
    std::vector<double> values;  // float blocks round-trip exactly through double
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointBlock>& blocks);
// Throws DataError on a bad magic, unknown version or truncated file.
std::vector<CheckpointBlock> read_checkpoint(const std::filesystem::path& path);

const CheckpointBlock& find_block(const std::vector<CheckpointBlock>& blocks, std::string_view name);

// Tensors plus Adam moments ("<name>/m", "<name>/v") and the step counter
// ("<prefix>/step").
template <typename T>
void append_parameters(std::vector<CheckpointBlock>& blocks, const ad::ParameterSet<T>& params,
                       std::string_view prefix);
template <typename T>
void restore_parameters(const std::vector<CheckpointBlock>& blocks, ad::ParameterSet<T>& params,
                        std::string_view prefix);

}  // namespace rgtrec
