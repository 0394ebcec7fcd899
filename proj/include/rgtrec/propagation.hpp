#pragma once

// LightGCN-style local propagation and the masked-graph encoder built on it.

#include <cstddef>
#include <memory>

#include "rgtrec/attention.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/tensor.hpp"
#include "rgtrec/topology.hpp"

namespace rgtrec {

enum class LayerCombination { mean_of_layers, last_layer };

struct PropagationConfig {
    std::size_t layers = 1;
    LayerCombination combination = LayerCombination::mean_of_layers;
};

// Â with β(k,k') = 1/√(deg k · deg k') over the graph's own degrees. Isolated
// nodes get a unit diagonal entry so their embedding carries through.
template <typename T>
std::shared_ptr<const ad::SparseMatrix<T>> normalized_adjacency(const BipartiteGraph& g);

template <typename T>
ad::Tensor<T> lightgcn_propagate(const BipartiteGraph& g, const ad::Tensor<T>& s0, const PropagationConfig& cfg);

// Same, reusing a prebuilt operator.
template <typename T>
ad::Tensor<T> lightgcn_propagate(std::shared_ptr<const ad::SparseMatrix<T>> adjacency, const ad::Tensor<T>& s0,
                                 const PropagationConfig& cfg);

struct EncoderFlags {
    bool topology = true;
    bool residual = true;
    bool output_projection = true;
};

// S = GT(G_M, TE(S̄_L)): topology injection on the local embeddings followed by
// the residual graph transformer on the masked graph.
template <typename T>
ad::Tensor<T> encode_masked(const BipartiteGraph& g_masked, const ad::Tensor<T>& s_local,
                            const TopologyEncoder<T>& topo, const TopoParams<T>& topo_params,
                            const AttentionParams<T>& attention, std::size_t gt_layers,
                            const EncoderFlags& flags = {});

}  // namespace rgtrec
