#pragma once

// Sparse multi-head attention over graph neighbours. The normalised scores
// double as edge rationale probabilities; the same parameters drive the
// light self-attention block stacked with residual links.

#include <cstddef>
#include <span>
#include <vector>

#include "rgtrec/graph_store.hpp"
#include "rgtrec/rng.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec {

// Head h owns rows [h·d/H, (h+1)·d/H) of the query, key and value maps, so
// each d × d matrix stacks the per-head (d/H) × d transforms.
template <typename T>
struct AttentionParams {
    std::size_t heads = 1;
    std::size_t dim = 0;
    ad::Tensor<T> query;
    ad::Tensor<T> key;
    ad::Tensor<T> value;
    ad::Tensor<T> output;  // d × d
};

// Entries uniform in [-1/√d, 1/√d].
template <typename T>
AttentionParams<T> init_attention(std::size_t dim, std::size_t heads, Rng& rng);

// Per-head softmax over each node's neighbours of (W_Q h_k)·(W_K h_k') / √(d/H).
// Rows follow the graph's directed CSR entries; isolated nodes have none.
template <typename T>
ad::Tensor<T> attention_scores(const ad::Tensor<T>& h_bar, const BipartiteGraph& g, const AttentionParams<T>& params);

struct EdgeScoreTable {
    std::size_t heads = 0;
    std::vector<double> head_scores;  // directed CSR entries × heads
    std::vector<double> probs;        // one per undirected edge, sums to 1
};

// Head-mean of the normalised scores, averaged over both directions of each
// edge and normalised over E.
EdgeScoreTable edge_rationale_probs(std::span<const double> head_scores, std::size_t heads, const BipartiteGraph& g);

template <typename T>
EdgeScoreTable edge_rationale_probs(const ad::Tensor<T>& head_scores, const BipartiteGraph& g);

// Attention-weighted neighbour messages W_V h_k', heads concatenated, then the
// output projection (skipped when `output_projection` is false).
template <typename T>
ad::Tensor<T> light_self_attention(const ad::Tensor<T>& h_in, const BipartiteGraph& g,
                                   const AttentionParams<T>& params, bool output_projection = true);

// h ← attention(h) + h, n_layers times with shared parameters. With
// `residual` off the skip connection is dropped.
template <typename T>
ad::Tensor<T> residual_gt(const ad::Tensor<T>& h_in, const BipartiteGraph& g, const AttentionParams<T>& params,
                          std::size_t n_layers, bool residual = true, bool output_projection = true);

}  // namespace rgtrec
