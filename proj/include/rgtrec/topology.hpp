#pragma once

// Anchor-based positional encoding: anchors are sampled once, hop distances
// to them are computed with a truncated Dijkstra search, and the resulting
// correlation weights drive a stack of position-aware propagation layers
// whose output is added onto the id embeddings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "rgtrec/graph_store.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec {

inline constexpr std::uint32_t kUnreachable = std::numeric_limits<std::uint32_t>::max();

struct AnchorSet {
    std::vector<std::uint32_t> nodes;
    std::uint64_t seed = 0;

    std::size_t size() const { return nodes.size(); }
};

// Uniform sample without replacement over all of V.
AnchorSet sample_anchors(const BipartiteGraph& g, std::size_t count, std::uint64_t seed);

// Hop distances node → anchor. Entries beyond cutoff + 1 hops are kUnreachable.
struct DistanceTable {
    std::size_t num_nodes = 0;
    std::size_t num_anchors = 0;
    std::uint32_t cutoff = 0;
    std::vector<std::uint32_t> hops;  // num_nodes × num_anchors

    std::uint32_t at(std::size_t node, std::size_t anchor) const { return hops[node * num_anchors + anchor]; }
};

DistanceTable shortest_paths(const BipartiteGraph& g, const AnchorSet& anchors, std::uint32_t cutoff,
                             std::size_t threads = 1);

// 1 / (d + 1) within the cutoff, 0 beyond it.
double correlation_weight(std::uint32_t hops, std::uint32_t cutoff);

struct CorrelationWeights {
    std::size_t num_nodes = 0;
    std::size_t num_anchors = 0;
    std::uint32_t cutoff = 0;
    std::vector<double> weights;  // num_nodes × num_anchors

    double at(std::size_t node, std::size_t anchor) const { return weights[node * num_anchors + anchor]; }
};

CorrelationWeights correlation_weights(const DistanceTable& distances);

// Distance cache keyed by graph fingerprint, anchor seed and cutoff. Returns
// nullopt when the file is missing or was written for a different key.
void save_distance_table(const std::filesystem::path& path, const DistanceTable& table,
                         std::uint64_t graph_fingerprint, std::uint64_t anchor_seed);
std::optional<DistanceTable> load_distance_table(const std::filesystem::path& path,
                                                 std::uint64_t graph_fingerprint, std::uint64_t anchor_seed,
                                                 std::uint32_t cutoff);

template <typename T>
struct TopoParams {
    std::vector<ad::Tensor<T>> layers;  // each d × 2d
};

// h̃_k = Σ_a W · ω(k,a) · [h_k ‖ h_a] / |A|
template <typename T>
ad::Tensor<T> pgnn_layer(const ad::Tensor<T>& h_prev, const AnchorSet& anchors, const CorrelationWeights& omega,
                         const ad::Tensor<T>& weight);

// H̄ = H + H̃^L after `params.layers.size()` propagation layers.
template <typename T>
ad::Tensor<T> topo_encode(const ad::Tensor<T>& h_id, const AnchorSet& anchors, const CorrelationWeights& omega,
                          const TopoParams<T>& params);

// Holds the constant anchor operators so repeated encodes do not rebuild them.
template <typename T>
class TopologyEncoder {
public:
    TopologyEncoder() = default;
    TopologyEncoder(AnchorSet anchors, const CorrelationWeights& omega);

    const AnchorSet& anchors() const { return anchors_; }
    ad::Tensor<T> layer(const ad::Tensor<T>& h_prev, const ad::Tensor<T>& weight) const;
    ad::Tensor<T> encode(const ad::Tensor<T>& h_id, const TopoParams<T>& params) const;

private:
    AnchorSet anchors_;
    ad::Tensor<T> scaled_weights_;    // ω / |A|, constant
    std::vector<T> self_factors_;     // Σ_a ω(k,a) / |A|
};

}  // namespace rgtrec
