#include "rgtrec/attention.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace rgtrec {

namespace {

template <typename T>
ad::Tensor<T> uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(rows * cols);
    for (auto& v : values) {
        v = static_cast<T>(dist(rng));
    }
    return ad::Tensor<T>({rows, cols}, std::move(values));
}

template <typename T>
void check_params(const ad::Tensor<T>& h, const AttentionParams<T>& params) {
    if (params.heads == 0 || params.dim % params.heads != 0) {
        throw std::invalid_argument("attention: width " + std::to_string(params.dim) + " is not divisible by " +
                                    std::to_string(params.heads) + " heads");
    }
    if (h.rank() != 2 || h.cols() != params.dim) {
        throw ad::ShapeError("attention: embeddings " + ad::shape_string(h.shape()) + " do not have width " +
                             std::to_string(params.dim));
    }
}

std::size_t count_isolated(const BipartiteGraph& g) {
    std::size_t isolated = 0;
    for (std::uint32_t k = 0; k < g.num_nodes(); ++k) {
        isolated += g.degree(k) == 0 ? 1 : 0;
    }
    return isolated;
}

}  // namespace

template <typename T>
AttentionParams<T> init_attention(std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
        throw std::invalid_argument("attention: width " + std::to_string(dim) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    AttentionParams<T> params;
    params.heads = heads;
    params.dim = dim;
    params.query = uniform_matrix<T>(dim, dim, bound, rng);
    params.key = uniform_matrix<T>(dim, dim, bound, rng);
    params.value = uniform_matrix<T>(dim, dim, bound, rng);
    params.output = uniform_matrix<T>(dim, dim, bound, rng);
    return params;
}

template <typename T>
ad::Tensor<T> attention_scores(const ad::Tensor<T>& h_bar, const BipartiteGraph& g, const AttentionParams<T>& params) {
    check_params(h_bar, params);
    if (h_bar.rows() != g.num_nodes()) {
        throw ad::ShapeError("attention_scores: " + std::to_string(h_bar.rows()) + " embedding rows for " +
                             std::to_string(g.num_nodes()) + " nodes");
    }
    if (const auto isolated = count_isolated(g); isolated > 0) {
        spdlog::debug("attention: {} isolated nodes have no attention row", isolated);
    }
    const auto q = ad::matmul_nt(h_bar, params.query);
    const auto k = ad::matmul_nt(h_bar, params.key);
    const T factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(params.dim / params.heads)));
    const auto raw = ad::edge_head_dot(q, k, g.segment_index(), params.heads, factor);
    return ad::segment_softmax(raw, g.segment_index());
}

EdgeScoreTable edge_rationale_probs(std::span<const double> head_scores, std::size_t heads, const BipartiteGraph& g) {
    const auto entries = g.entry_edges();
    if (heads == 0 || head_scores.size() != entries.size() * heads) {
        throw std::invalid_argument("edge_rationale_probs: " + std::to_string(head_scores.size()) +
                                    " scores do not cover " + std::to_string(entries.size()) + " entries × " +
                                    std::to_string(heads) + " heads");
    }
    EdgeScoreTable table;
    table.heads = heads;
    table.head_scores.assign(head_scores.begin(), head_scores.end());
    table.probs.assign(g.num_edges(), 0.0);
    for (std::size_t e = 0; e < entries.size(); ++e) {
        double mean = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            mean += head_scores[e * heads + h];
        }
        // Each undirected edge owns exactly two directed entries.
        table.probs[entries[e]] += 0.5 * mean / static_cast<double>(heads);
    }
    const double total = std::accumulate(table.probs.begin(), table.probs.end(), 0.0);
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw std::runtime_error("edge_rationale_probs: degenerate attention (total score " + std::to_string(total) +
                                 " over " + std::to_string(g.num_edges()) + " edges)");
    }
    for (auto& p : table.probs) {
        p /= total;
    }
    return table;
}

template <typename T>
EdgeScoreTable edge_rationale_probs(const ad::Tensor<T>& head_scores, const BipartiteGraph& g) {
    std::vector<double> scores(head_scores.values().begin(), head_scores.values().end());
    return edge_rationale_probs(scores, head_scores.cols(), g);
}

template <typename T>
ad::Tensor<T> light_self_attention(const ad::Tensor<T>& h_in, const BipartiteGraph& g,
                                   const AttentionParams<T>& params, bool output_projection) {
    const auto alpha = attention_scores(h_in, g, params);
    const auto v = ad::matmul_nt(h_in, params.value);
    const auto messages = ad::edge_aggregate(alpha, v, g.segment_index(), params.heads);
    return output_projection ? ad::matmul_nt(messages, params.output) : messages;
}

template <typename T>
ad::Tensor<T> residual_gt(const ad::Tensor<T>& h_in, const BipartiteGraph& g, const AttentionParams<T>& params,
                          std::size_t n_layers, bool residual, bool output_projection) {
    if (n_layers == 0) {
        throw std::invalid_argument("residual_gt: at least one layer is required");
    }
    ad::Tensor<T> h = h_in;
    for (std::size_t l = 0; l < n_layers; ++l) {
        auto attended = light_self_attention(h, g, params, output_projection);
        h = residual ? ad::add(attended, h) : attended;
    }
    return h;
}

#define RGTREC_INSTANTIATE_ATTENTION(T)                                                                           \
    template AttentionParams<T> init_attention<T>(std::size_t, std::size_t, Rng&);                                \
    template ad::Tensor<T> attention_scores<T>(const ad::Tensor<T>&, const BipartiteGraph&,                       \
                                               const AttentionParams<T>&);                                        \
    template EdgeScoreTable edge_rationale_probs<T>(const ad::Tensor<T>&, const BipartiteGraph&);                 \
    template ad::Tensor<T> light_self_attention<T>(const ad::Tensor<T>&, const BipartiteGraph&,                   \
                                                   const AttentionParams<T>&, bool);                              \
    template ad::Tensor<T> residual_gt<T>(const ad::Tensor<T>&, const BipartiteGraph&, const AttentionParams<T>&, \
                                          std::size_t, bool, bool);

RGTREC_INSTANTIATE_ATTENTION(float)
RGTREC_INSTANTIATE_ATTENTION(double)

#undef RGTREC_INSTANTIATE_ATTENTION

}  // namespace rgtrec
