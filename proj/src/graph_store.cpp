#include "rgtrec/graph_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "rgtrec/rng.hpp"

namespace rgtrec {

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw DataError("unknown split label '" + std::string(text) + "'");
}

std::size_t InteractionDataset::count(Split split) const {
    return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), split));
}

std::vector<std::vector<std::uint32_t>> InteractionDataset::items_by_user(Split split) const {
    std::vector<std::vector<std::uint32_t>> out(num_users);
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        if (assignment.at(i) == split) {
            out[interactions[i].user].push_back(interactions[i].item);
        }
    }
    for (auto& items : out) {
        std::sort(items.begin(), items.end());
    }
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return fields;
}

struct TokenIndex {
    std::unordered_map<std::string, std::uint32_t> ids;
    std::vector<std::string>* tokens;

    std::uint32_t intern(std::string_view token) {
        auto [it, inserted] = ids.try_emplace(std::string(token), static_cast<std::uint32_t>(tokens->size()));
        if (inserted) {
            tokens->emplace_back(token);
        }
        return it->second;
    }
};

std::uint64_t pair_key(std::uint32_t user, std::uint32_t item) {
    return (static_cast<std::uint64_t>(user) << 32) | item;
}

}  // namespace

InteractionDataset parse_interactions(std::istream& in, InputFormat format) {
    const char sep = format == InputFormat::csv_pairs ? ',' : '\t';
    InteractionDataset ds;
    TokenIndex users{{}, &ds.user_tokens};
    TokenIndex items{{}, &ds.item_tokens};
    std::unordered_set<std::uint64_t> seen;
    std::size_t duplicates = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') {
            continue;
        }
        const auto fields = split_fields(view, sep);
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
            throw DataError("line " + std::to_string(line_no) + ": expected '<user>" +
                            (sep == ',' ? std::string(",") : std::string("\\t")) + "<item>', got '" +
                            std::string(view) + "'");
        }
        const std::uint32_t u = users.intern(fields[0]);
        const std::uint32_t p = items.intern(fields[1]);
        if (seen.insert(pair_key(u, p)).second) {
            ds.interactions.push_back({u, p});
        } else {
            ++duplicates;
        }
    }
    if (ds.interactions.empty()) {
        throw DataError("no interactions found in input");
    }
    ds.num_users = ds.user_tokens.size();
    ds.num_items = ds.item_tokens.size();
    spdlog::debug("loaded {} users, {} items, {} interactions ({} duplicates dropped)", ds.num_users,
                  ds.num_items, ds.interactions.size(), duplicates);
    return ds;
}

InteractionDataset load_interactions(const std::filesystem::path& path, InputFormat format) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open interaction file '" + path.string() + "'");
    }
    return parse_interactions(in, format);
}

InputFormat format_for_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? InputFormat::csv_pairs : InputFormat::tsv_pairs;
}

InteractionDataset split(InteractionDataset ds, const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
        throw std::invalid_argument("split ratios must be non-negative");
    }
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    std::vector<std::vector<std::size_t>> by_user(ds.num_users);
    for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
        by_user[ds.interactions[i].user].push_back(i);
    }
    ds.assignment.assign(ds.interactions.size(), Split::train);
    for (std::size_t u = 0; u < ds.num_users; ++u) {
        auto& rows = by_user[u];
        if (rows.empty()) {
            continue;
        }
        Rng rng = make_rng(seed, "split", u);
        std::shuffle(rows.begin(), rows.end(), rng);
        const auto n = static_cast<long long>(rows.size());
        auto n_val = static_cast<long long>(std::llround(static_cast<double>(n) * ratios.val));
        auto n_test = static_cast<long long>(std::llround(static_cast<double>(n) * ratios.test));
        while (n - n_val - n_test < 1) {
            if (n_test > 0) {
                --n_test;
            } else {
                --n_val;
            }
        }
        for (long long i = 0; i < n_val; ++i) {
            ds.assignment[rows[i]] = Split::val;
        }
        for (long long i = n_val; i < n_val + n_test; ++i) {
            ds.assignment[rows[i]] = Split::test;
        }
    }
    return ds;
}

// ---- BipartiteGraph -------------------------------------------------------------

BipartiteGraph::BipartiteGraph(std::size_t num_users, std::size_t num_items, std::vector<Edge> edges)
    : num_users_(num_users), num_items_(num_items), edges_(std::move(edges)) {
    const std::size_t n = num_nodes();
    auto index = std::make_shared<ad::SegmentIndex>();
    index->num_nodes = n;
    index->offsets.assign(n + 1, 0);
    for (const auto& e : edges_) {
        if (e.user_node >= num_users_ || e.item_node < num_users_ || e.item_node >= n) {
            throw DataError("edge (" + std::to_string(e.user_node) + ", " + std::to_string(e.item_node) +
                            ") is not a user–item pair");
        }
        ++index->offsets[e.user_node + 1];
        ++index->offsets[e.item_node + 1];
    }
    std::partial_sum(index->offsets.begin(), index->offsets.end(), index->offsets.begin());
    const std::size_t entries = index->offsets.back();
    index->src.resize(entries);
    index->dst.resize(entries);
    entry_edge_.resize(entries);
    std::vector<std::size_t> cursor(index->offsets.begin(), index->offsets.end() - 1);
    for (std::uint32_t id = 0; id < edges_.size(); ++id) {
        const auto& e = edges_[id];
        std::size_t slot = cursor[e.user_node]++;
        index->src[slot] = e.user_node;
        index->dst[slot] = e.item_node;
        entry_edge_[slot] = id;
        slot = cursor[e.item_node]++;
        index->src[slot] = e.item_node;
        index->dst[slot] = e.user_node;
        entry_edge_[slot] = id;
    }
    index_ = std::move(index);
}

std::size_t BipartiteGraph::degree(std::uint32_t node) const {
    return index_->offsets.at(node + 1) - index_->offsets[node];
}

std::span<const std::uint32_t> BipartiteGraph::neighbors(std::uint32_t node) const {
    const std::size_t begin = index_->offsets.at(node);
    return std::span<const std::uint32_t>(index_->dst).subspan(begin, index_->offsets[node + 1] - begin);
}

BipartiteGraph BipartiteGraph::subgraph(std::span<const std::uint32_t> edge_indices) const {
    std::vector<Edge> kept;
    kept.reserve(edge_indices.size());
    for (const auto id : edge_indices) {
        kept.push_back(edges_.at(id));
    }
    return BipartiteGraph(num_users_, num_items_, std::move(kept));
}

std::uint64_t BipartiteGraph::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mix(num_users_);
    mix(num_items_);
    for (const auto& e : edges_) {
        mix(e.user_node);
        mix(e.item_node);
    }
    return h;
}

BipartiteGraph build_graph(const InteractionDataset& ds) {
    if (!ds.is_split()) {
        throw DataError("build_graph: dataset has not been split");
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
        if (ds.assignment[i] == Split::train) {
            const auto& x = ds.interactions[i];
            edges.push_back({x.user, static_cast<std::uint32_t>(ds.num_users + x.item)});
        }
    }
    return BipartiteGraph(ds.num_users, ds.num_items, std::move(edges));
}

// ---- manifest ---------------------------------------------------------------------

void write_manifest(const InteractionDataset& ds, const std::filesystem::path& dir) {
    if (!ds.is_split()) {
        throw DataError("write_manifest: dataset has not been split");
    }
    std::filesystem::create_directories(dir);
    std::ofstream splits(dir / "splits.tsv");
    std::ofstream ids(dir / "ids.tsv");
    if (!splits || !ids) {
        throw DataError("cannot write manifest into '" + dir.string() + "'");
    }
    splits << "user\titem\tsplit\n";
    for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
        const auto& x = ds.interactions[i];
        splits << ds.user_tokens[x.user] << '\t' << ds.item_tokens[x.item] << '\t' << to_string(ds.assignment[i])
               << '\n';
    }
    ids << "kind\tindex\ttoken\n";
    for (std::size_t u = 0; u < ds.user_tokens.size(); ++u) {
        ids << "user\t" << u << '\t' << ds.user_tokens[u] << '\n';
    }
    for (std::size_t p = 0; p < ds.item_tokens.size(); ++p) {
        ids << "item\t" << p << '\t' << ds.item_tokens[p] << '\n';
    }
}

InteractionDataset read_manifest(const std::filesystem::path& dir) {
    std::ifstream ids(dir / "ids.tsv");
    std::ifstream splits(dir / "splits.tsv");
    if (!ids || !splits) {
        throw DataError("missing splits.tsv or ids.tsv in '" + dir.string() + "'");
    }
    InteractionDataset ds;
    std::unordered_map<std::string, std::uint32_t> user_ids, item_ids;
    std::string line;
    std::size_t line_no = 0;
    std::getline(ids, line);
    while (std::getline(ids, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 3) {
            throw DataError("ids.tsv line " + std::to_string(line_no + 1) + ": expected kind, index, token");
        }
        const auto index = static_cast<std::uint32_t>(std::stoul(std::string(fields[1])));
        auto& tokens = fields[0] == "user" ? ds.user_tokens : ds.item_tokens;
        auto& lookup = fields[0] == "user" ? user_ids : item_ids;
        if (index != tokens.size()) {
            throw DataError("ids.tsv line " + std::to_string(line_no + 1) + ": indices must be contiguous");
        }
        tokens.emplace_back(fields[2]);
        lookup.emplace(std::string(fields[2]), index);
    }
    ds.num_users = ds.user_tokens.size();
    ds.num_items = ds.item_tokens.size();
    line_no = 0;
    std::getline(splits, line);
    while (std::getline(splits, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 3) {
            throw DataError("splits.tsv line " + std::to_string(line_no + 1) + ": expected user, item, split");
        }
        const auto u = user_ids.find(std::string(fields[0]));
        const auto p = item_ids.find(std::string(fields[1]));
        if (u == user_ids.end() || p == item_ids.end()) {
            throw DataError("splits.tsv line " + std::to_string(line_no + 1) + ": token missing from ids.tsv");
        }
        ds.interactions.push_back({u->second, p->second});
        ds.assignment.push_back(parse_split(fields[2]));
    }
    if (ds.interactions.empty()) {
        throw DataError("splits.tsv in '" + dir.string() + "' has no rows");
    }
    return ds;
}

// ---- synthetic data -----------------------------------------------------------------

std::size_t block_of_user(const BlockDatasetOptions& options, std::uint32_t user) {
    return static_cast<std::size_t>(user) * options.blocks / options.users;
}

std::size_t block_of_item(const BlockDatasetOptions& options, std::uint32_t item) {
    return static_cast<std::size_t>(item) * options.blocks / options.items;
}

InteractionDataset make_block_dataset(const BlockDatasetOptions& options, std::uint64_t seed) {
    if (options.blocks == 0 || options.users < options.blocks || options.items < options.blocks) {
        throw std::invalid_argument("block dataset needs at least one user and item per block");
    }
    if (options.within_block < 0.0 || options.within_block > 1.0) {
        throw std::invalid_argument("within_block must lie in [0, 1]");
    }
    std::vector<std::vector<std::uint32_t>> block_items(options.blocks);
    for (std::uint32_t p = 0; p < options.items; ++p) {
        block_items[block_of_item(options, p)].push_back(p);
    }
    InteractionDataset ds;
    ds.num_users = options.users;
    ds.num_items = options.items;
    for (std::size_t u = 0; u < options.users; ++u) {
        ds.user_tokens.push_back("u" + std::to_string(u));
    }
    for (std::size_t p = 0; p < options.items; ++p) {
        ds.item_tokens.push_back("i" + std::to_string(p));
    }
    for (std::uint32_t u = 0; u < options.users; ++u) {
        Rng rng = make_rng(seed, "blocks", u);
        const auto& own = block_items[block_of_user(options, u)];
        const std::size_t want = std::min(options.interactions_per_user, options.items);
        std::size_t inside = static_cast<std::size_t>(std::llround(options.within_block * static_cast<double>(want)));
        inside = std::min(inside, own.size());
        std::size_t outside = std::min(want - inside, options.items - own.size());

        std::vector<std::uint32_t> pool = own;
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i = 0; i < inside; ++i) {
            ds.interactions.push_back({u, pool[i]});
        }
        std::vector<std::uint32_t> others;
        for (std::uint32_t p = 0; p < options.items; ++p) {
            if (block_of_item(options, p) != block_of_user(options, u)) {
                others.push_back(p);
            }
        }
        std::shuffle(others.begin(), others.end(), rng);
        for (std::size_t i = 0; i < outside; ++i) {
            ds.interactions.push_back({u, others[i]});
        }
    }
    return ds;
}

}  // namespace rgtrec
