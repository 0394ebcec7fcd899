#include "rgtrec/propagation.hpp"

#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace rgtrec {

template <typename T>
std::shared_ptr<const ad::SparseMatrix<T>> normalized_adjacency(const BipartiteGraph& g) {
    auto m = std::make_shared<ad::SparseMatrix<T>>();
    const std::size_t n = g.num_nodes();
    m->rows = n;
    m->cols = n;
    m->offsets.assign(n + 1, 0);
    std::size_t isolated = 0;
    for (std::uint32_t k = 0; k < n; ++k) {
        const auto neighbors = g.neighbors(k);
        if (neighbors.empty()) {
            m->indices.push_back(k);
            m->values.push_back(T{1});
            ++isolated;
        }
        const double dk = static_cast<double>(neighbors.size());
        for (const auto j : neighbors) {
            m->indices.push_back(j);
            m->values.push_back(static_cast<T>(1.0 / std::sqrt(dk * static_cast<double>(g.degree(j)))));
        }
        m->offsets[k + 1] = m->indices.size();
    }
    if (isolated > 0) {
        spdlog::debug("lightgcn: {} zero-degree nodes keep their embedding", isolated);
    }
    return m;
}

template <typename T>
ad::Tensor<T> lightgcn_propagate(std::shared_ptr<const ad::SparseMatrix<T>> adjacency, const ad::Tensor<T>& s0,
                                 const PropagationConfig& cfg) {
    if (cfg.layers < 1) {
        throw std::invalid_argument("lightgcn_propagate: at least one layer is required");
    }
    ad::Tensor<T> current = s0;
    ad::Tensor<T> total = s0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        current = ad::spmm(adjacency, current);
        if (cfg.combination == LayerCombination::mean_of_layers) {
            total = ad::add(total, current);
        }
    }
    if (cfg.combination == LayerCombination::last_layer) {
        return current;
    }
    return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(cfg.layers + 1)));
}

template <typename T>
ad::Tensor<T> lightgcn_propagate(const BipartiteGraph& g, const ad::Tensor<T>& s0, const PropagationConfig& cfg) {
    if (s0.rows() != g.num_nodes()) {
        throw ad::ShapeError("lightgcn_propagate: embeddings " + ad::shape_string(s0.shape()) + " for " +
                             std::to_string(g.num_nodes()) + " nodes");
    }
    return lightgcn_propagate(normalized_adjacency<T>(g), s0, cfg);
}

template <typename T>
ad::Tensor<T> encode_masked(const BipartiteGraph& g_masked, const ad::Tensor<T>& s_local,
                            const TopologyEncoder<T>& topo, const TopoParams<T>& topo_params,
                            const AttentionParams<T>& attention, std::size_t gt_layers, const EncoderFlags& flags) {
    const ad::Tensor<T> positioned = flags.topology ? topo.encode(s_local, topo_params) : s_local;
    return residual_gt(positioned, g_masked, attention, gt_layers, flags.residual, flags.output_projection);
}

#define RGTREC_INSTANTIATE_PROPAGATION(T)                                                                           \
    template std::shared_ptr<const ad::SparseMatrix<T>> normalized_adjacency<T>(const BipartiteGraph&);             \
    template ad::Tensor<T> lightgcn_propagate<T>(const BipartiteGraph&, const ad::Tensor<T>&,                       \
                                                 const PropagationConfig&);                                         \
    template ad::Tensor<T> lightgcn_propagate<T>(std::shared_ptr<const ad::SparseMatrix<T>>, const ad::Tensor<T>&, \
                                                 const PropagationConfig&);                                         \
    template ad::Tensor<T> encode_masked<T>(const BipartiteGraph&, const ad::Tensor<T>&, const TopologyEncoder<T>&, \
                                            const TopoParams<T>&, const AttentionParams<T>&, std::size_t,           \
                                            const EncoderFlags&);

RGTREC_INSTANTIATE_PROPAGATION(float)
RGTREC_INSTANTIATE_PROPAGATION(double)

#undef RGTREC_INSTANTIATE_PROPAGATION

}  // namespace rgtrec
