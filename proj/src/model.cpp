#include "rgtrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <spdlog/spdlog.h>

#include "rgtrec/rng.hpp"

namespace rgtrec {

GraphContext build_context(const InteractionDataset& ds, const TrainConfig& cfg, std::size_t threads) {
    GraphContext ctx;
    ctx.graph = build_graph(ds);
    ctx.train_items = ds.items_by_user(Split::train);
    std::size_t count = cfg.anchor_set;
    if (count > ctx.graph.num_nodes()) {
        spdlog::warn("anchor_set {} exceeds the {} graph nodes, using every node", count, ctx.graph.num_nodes());
        count = ctx.graph.num_nodes();
    }
    ctx.anchors = sample_anchors(ctx.graph, count, derive_seed(cfg.seed, "anchors"));
    const auto distances =
        shortest_paths(ctx.graph, ctx.anchors, static_cast<std::uint32_t>(cfg.hop_cutoff), threads);
    ctx.omega = correlation_weights(distances);
    return ctx;
}

namespace {

template <typename T>
ad::Tensor<T> uniform(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(rows * cols);
    for (auto& v : values) {
        v = static_cast<T>(dist(rng));
    }
    return ad::Tensor<T>({rows, cols}, std::move(values));
}

template <typename T>
std::vector<const ad::Tensor<T>*> tensors_of(const ModelParams<T>& p) {
    std::vector<const ad::Tensor<T>*> out{&p.embeddings};
    for (const auto& w : p.topo.layers) {
        out.push_back(&w);
    }
    for (const auto* w : {&p.attention.query, &p.attention.key, &p.attention.value, &p.attention.output}) {
        out.push_back(w);
    }
    return out;
}

}  // namespace

template <typename T>
ModelParams<T> init_model(const TrainConfig& cfg, std::size_t num_nodes, std::uint64_t seed, std::string_view prefix) {
    const std::size_t d = cfg.latdim;
    const std::string name(prefix);
    ModelParams<T> p;

    auto rng = make_rng(seed, name + ".embeddings");
    p.embeddings = p.set.add(name + ".embeddings", uniform<T>(num_nodes, d, 0.5 / std::sqrt(double(d)), rng));

    auto topo_rng = make_rng(seed, name + ".topo");
    for (std::size_t l = 0; l < cfg.pnn; ++l) {
        p.topo.layers.push_back(p.set.add(name + ".topo." + std::to_string(l),
                                          uniform<T>(d, 2 * d, 1.0 / std::sqrt(2.0 * double(d)), topo_rng)));
    }

    auto attention_rng = make_rng(seed, name + ".attention");
    p.attention = init_attention<T>(d, cfg.head, attention_rng);
    p.attention.query = p.set.add(name + ".attention.query", p.attention.query);
    p.attention.key = p.set.add(name + ".attention.key", p.attention.key);
    p.attention.value = p.set.add(name + ".attention.value", p.attention.value);
    p.attention.output = p.set.add(name + ".attention.output", p.attention.output);
    return p;
}

template <typename T>
ModelParams<T> frozen_copy(const ModelParams<T>& params) {
    ModelParams<T> out;
    out.embeddings = ad::detach(params.embeddings);
    for (const auto& w : params.topo.layers) {
        out.topo.layers.push_back(ad::detach(w));
    }
    out.attention.heads = params.attention.heads;
    out.attention.dim = params.attention.dim;
    out.attention.query = ad::detach(params.attention.query);
    out.attention.key = ad::detach(params.attention.key);
    out.attention.value = ad::detach(params.attention.value);
    out.attention.output = ad::detach(params.attention.output);
    return out;
}

template <typename T>
void copy_values(const ModelParams<T>& from, ModelParams<T>& to) {
    blend_values(from, to, 0.0);
}

template <typename T>
void blend_values(const ModelParams<T>& from, ModelParams<T>& to, double decay) {
    const auto src = tensors_of(from);
    const auto dst = tensors_of(to);
    if (src.size() != dst.size()) {
        throw ad::ShapeError("model parameter layouts differ");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i]->shape() != dst[i]->shape()) {
            throw ad::ShapeError("model parameter shapes differ: " + ad::shape_string(src[i]->shape()) + " vs " +
                                 ad::shape_string(dst[i]->shape()));
        }
        ad::Tensor<T> target = *dst[i];  // shares storage
        auto values = target.mutable_values();
        const auto source = src[i]->values();
        if (decay == 0.0) {
            std::copy(source.begin(), source.end(), values.begin());
            continue;
        }
        const T keep = static_cast<T>(decay), take = static_cast<T>(1.0 - decay);
        for (std::size_t j = 0; j < values.size(); ++j) {
            values[j] = keep * values[j] + take * source[j];
        }
    }
}

template <typename T>
RgtModel<T>::RgtModel(const GraphContext& context, const TrainConfig& cfg)
    : context_(&context),
      cfg_(cfg),
      topo_(context.anchors, context.omega),
      adjacency_(normalized_adjacency<T>(context.graph)) {}

template <typename T>
ad::Tensor<T> RgtModel<T>::positioned(const ModelParams<T>& p, const ad::Tensor<T>& h) const {
    return cfg_.use_topology ? topo_.encode(h, p.topo) : h;
}

template <typename T>
ad::Tensor<T> RgtModel<T>::rationale_embeddings(const ModelParams<T>& p) const {
    return residual_gt(positioned(p, p.embeddings), context_->graph, p.attention, cfg_.gt, cfg_.use_residual,
                       cfg_.use_output_projection);
}

template <typename T>
EdgeScoreTable RgtModel<T>::score_edges(const ModelParams<T>& p) const {
    const auto frozen = frozen_copy(p);
    const auto scores = attention_scores(positioned(frozen, frozen.embeddings), context_->graph, frozen.attention);
    return edge_rationale_probs(scores, context_->graph);
}

template <typename T>
ad::Tensor<T> RgtModel<T>::local(const ModelParams<T>& p,
                                 std::shared_ptr<const ad::SparseMatrix<T>> adjacency) const {
    return lightgcn_propagate(std::move(adjacency), p.embeddings, cfg_.propagation());
}

template <typename T>
ad::Tensor<T> RgtModel<T>::encode(const ModelParams<T>& p, const BipartiteGraph& g,
                                  std::shared_ptr<const ad::SparseMatrix<T>> adjacency) const {
    return encode_masked(g, local(p, std::move(adjacency)), topo_, p.topo, p.attention, cfg_.gt,
                         cfg_.encoder_flags());
}

template <typename T>
ad::Tensor<T> RgtModel<T>::predict(const ModelParams<T>& p) const {
    const auto frozen = frozen_copy(p);
    return encode(frozen, context_->graph, adjacency_);
}

#define RGTREC_INSTANTIATE_MODEL(T)                                                                          \
    template ModelParams<T> init_model<T>(const TrainConfig&, std::size_t, std::uint64_t, std::string_view); \
    template ModelParams<T> frozen_copy<T>(const ModelParams<T>&);                                           \
    template void copy_values<T>(const ModelParams<T>&, ModelParams<T>&);                                    \
    template void blend_values<T>(const ModelParams<T>&, ModelParams<T>&, double);                           \
    template class RgtModel<T>;

RGTREC_INSTANTIATE_MODEL(float)
RGTREC_INSTANTIATE_MODEL(double)

#undef RGTREC_INSTANTIATE_MODEL

}  // namespace rgtrec
