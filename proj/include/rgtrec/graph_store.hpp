#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rgtrec/errors.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec {

enum class Split : std::uint8_t { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

enum class InputFormat { tsv_pairs, csv_pairs };

struct Interaction {
    std::uint32_t user = 0;
    std::uint32_t item = 0;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionDataset {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::vector<Interaction> interactions;
    // One label per interaction; empty until split() has run.
    std::vector<Split> assignment;
    // Original tokens, indexed by the contiguous ids.
    std::vector<std::string> user_tokens;
    std::vector<std::string> item_tokens;

    bool is_split() const { return !interactions.empty() && assignment.size() == interactions.size(); }
    std::size_t count(Split split) const;
    // Sorted item ids per user restricted to one split.
    std::vector<std::vector<std::uint32_t>> items_by_user(Split split) const;
};

// Lines are `<user><sep><item>[<sep>...]`; blank lines and lines starting with
// '#' are skipped. Users and items are reindexed 0.. in order of first
// appearance and duplicate pairs collapse to one interaction.
InteractionDataset parse_interactions(std::istream& in, InputFormat format);
InteractionDataset load_interactions(const std::filesystem::path& path, InputFormat format);
InputFormat format_for_path(const std::filesystem::path& path);

struct SplitRatios {
    double train = 0.70;
    double val = 0.05;
    double test = 0.25;
};

// Per-user stratified assignment. Every user keeps at least one training
// interaction.
InteractionDataset split(InteractionDataset ds, const SplitRatios& ratios, std::uint64_t seed);

struct Edge {
    std::uint32_t user_node = 0;  // < num_users
    std::uint32_t item_node = 0;  // num_users + item index

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Undirected user–item graph over V = U ∪ P stored as symmetric CSR. Items
// occupy node ids [num_users, num_users + num_items).
class BipartiteGraph {
public:
    BipartiteGraph() : BipartiteGraph(0, 0, {}) {}
    BipartiteGraph(std::size_t num_users, std::size_t num_items, std::vector<Edge> edges);

    std::size_t num_users() const { return num_users_; }
    std::size_t num_items() const { return num_items_; }
    std::size_t num_nodes() const { return num_users_ + num_items_; }
    std::size_t num_edges() const { return edges_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }

    std::size_t degree(std::uint32_t node) const;
    std::span<const std::uint32_t> neighbors(std::uint32_t node) const;
    // Undirected edge id of every directed CSR entry, aligned with the
    // segment index.
    std::span<const std::uint32_t> entry_edges() const { return entry_edge_; }
    std::shared_ptr<const ad::SegmentIndex> segment_index() const { return index_; }

    // Same node set, keeping only the listed edges.
    BipartiteGraph subgraph(std::span<const std::uint32_t> edge_indices) const;

    // Stable fingerprint of the node counts and edge list.
    std::uint64_t fingerprint() const;

private:
    std::size_t num_users_ = 0;
    std::size_t num_items_ = 0;
    std::vector<Edge> edges_;
    std::shared_ptr<const ad::SegmentIndex> index_;
    std::vector<std::uint32_t> entry_edge_;
};

// Graph over the train split only.
BipartiteGraph build_graph(const InteractionDataset& ds);

// splits.tsv (user, item, split) and ids.tsv (kind, index, token).
void write_manifest(const InteractionDataset& ds, const std::filesystem::path& dir);
InteractionDataset read_manifest(const std::filesystem::path& dir);

// Block-structured synthetic data: users and items fall into equal-sized
// blocks and a fixed share of each user's interactions stays inside the
// user's block.
struct BlockDatasetOptions {
    std::size_t users = 200;
    std::size_t items = 200;
    std::size_t blocks = 10;
    std::size_t interactions_per_user = 20;
    double within_block = 0.9;
};

InteractionDataset make_block_dataset(const BlockDatasetOptions& options, std::uint64_t seed);
std::size_t block_of_user(const BlockDatasetOptions& options, std::uint32_t user);
std::size_t block_of_item(const BlockDatasetOptions& options, std::uint32_t item);

}  // namespace rgtrec
