#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "rgtrec/attention.hpp"
#include "rgtrec/config.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/objectives.hpp"
#include "rgtrec/propagation.hpp"
#include "rgtrec/tensor.hpp"
#include "rgtrec/topology.hpp"

namespace rgtrec {

// Everything derived from the training graph that stays fixed across epochs.
struct GraphContext {
    BipartiteGraph graph;
    std::vector<std::vector<std::uint32_t>> train_items;  // sorted, per user
    AnchorSet anchors;
    CorrelationWeights omega;
};

GraphContext build_context(const InteractionDataset& ds, const TrainConfig& cfg, std::size_t threads = 1);

template <typename T>
struct ModelParams {
    ad::ParameterSet<T> set;
    ad::Tensor<T> embeddings;  // users then items, (I + J) × d
    TopoParams<T> topo;
    AttentionParams<T> attention;
};

// Parameter names carry `prefix` ("teacher", "student", ...).
template <typename T>
ModelParams<T> init_model(const TrainConfig& cfg, std::size_t num_nodes, std::uint64_t seed, std::string_view prefix);

// Detached copies that record nothing on the tape.
template <typename T>
ModelParams<T> frozen_copy(const ModelParams<T>& params);

template <typename T>
void copy_values(const ModelParams<T>& from, ModelParams<T>& to);

// to ← decay · to + (1 − decay) · from
template <typename T>
void blend_values(const ModelParams<T>& from, ModelParams<T>& to, double decay);

template <typename T>
class RgtModel {
public:
    RgtModel(const GraphContext& context, const TrainConfig& cfg);

    // Topology injection, or the identity when the component is disabled.
    ad::Tensor<T> positioned(const ModelParams<T>& p, const ad::Tensor<T>& h) const;
    // Graph transformer over the full training graph; scores the BPR term.
    ad::Tensor<T> rationale_embeddings(const ModelParams<T>& p) const;
    EdgeScoreTable score_edges(const ModelParams<T>& p) const;

    ad::Tensor<T> local(const ModelParams<T>& p, std::shared_ptr<const ad::SparseMatrix<T>> adjacency) const;
    ad::Tensor<T> encode(const ModelParams<T>& p, const BipartiteGraph& g,
                         std::shared_ptr<const ad::SparseMatrix<T>> adjacency) const;
    // Final prediction table on the full training graph.
    ad::Tensor<T> predict(const ModelParams<T>& p) const;

    const GraphContext& context() const { return *context_; }

private:
    const GraphContext* context_;
    TrainConfig cfg_;
    TopologyEncoder<T> topo_;
    std::shared_ptr<const ad::SparseMatrix<T>> adjacency_;
};

}  // namespace rgtrec
