#include "rgtrec/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "rgtrec/errors.hpp"

namespace rgtrec {

void LossWeights::validate() const {
    const std::pair<const char*, double> entries[] = {{"lambda_rec", rec}, {"lambda_rd", rd},      {"ctra", cir},
                                                      {"reg", reg},        {"lambda_distill", distill},
                                                      {"lambda_mae", mae}};
    for (const auto& [name, value] : entries) {
        if (!(value >= 0.0) || !std::isfinite(value)) {
            throw ConfigError(std::string(name) + " must be a finite non-negative weight");
        }
    }
    if (!(tau > 0.0)) {
        throw ConfigError("tau must be positive");
    }
}

namespace {

std::vector<std::uint32_t> item_nodes(std::span<const std::uint32_t> items, std::size_t num_users) {
    std::vector<std::uint32_t> nodes(items.size());
    std::transform(items.begin(), items.end(), nodes.begin(),
                   [num_users](std::uint32_t p) { return static_cast<std::uint32_t>(num_users + p); });
    return nodes;
}

}  // namespace

template <typename T>
ad::Tensor<T> loss_mae(const ad::Tensor<T>& s, std::span<const Edge> masked_out,
                       std::span<const std::uint32_t> negative_items, std::size_t negatives_per_edge,
                       std::size_t num_users) {
    if (masked_out.empty()) {
        spdlog::warn("loss_mae: no masked-out edges, reconstruction loss is 0");
        return ad::Tensor<T>::scalar(T{0});
    }
    if (negative_items.size() != masked_out.size() * negatives_per_edge) {
        throw std::invalid_argument("loss_mae: expected " + std::to_string(masked_out.size() * negatives_per_edge) +
                                    " negatives, got " + std::to_string(negative_items.size()));
    }
    std::vector<std::uint32_t> users, items;
    users.reserve(masked_out.size());
    items.reserve(masked_out.size());
    for (const auto& e : masked_out) {
        users.push_back(e.user_node);
        items.push_back(e.item_node);
    }
    const auto u = ad::gather_rows(s, users);
    const auto positive = ad::row_dot(u, ad::gather_rows(s, std::move(items)));
    auto total = ad::sum(ad::softplus(ad::scale(positive, T{-1})));
    if (negatives_per_edge > 0) {
        std::vector<std::uint32_t> neg_users;
        neg_users.reserve(negative_items.size());
        for (const auto user : users) {
            neg_users.insert(neg_users.end(), negatives_per_edge, user);
        }
        const auto negative = ad::row_dot(ad::gather_rows(s, std::move(neg_users)),
                                          ad::gather_rows(s, item_nodes(negative_items, num_users)));
        total = ad::add(total, ad::sum(ad::softplus(negative)));
    }
    return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(masked_out.size())));
}

template <typename T>
ad::Tensor<T> loss_mae_literal(const ad::Tensor<T>& s, std::span<const Edge> masked_out) {
    if (masked_out.empty()) {
        spdlog::warn("loss_mae: no masked-out edges, reconstruction loss is 0");
        return ad::Tensor<T>::scalar(T{0});
    }
    std::vector<std::uint32_t> users, items;
    for (const auto& e : masked_out) {
        users.push_back(e.user_node);
        items.push_back(e.item_node);
    }
    const auto scores = ad::row_dot(ad::gather_rows(s, std::move(users)), ad::gather_rows(s, std::move(items)));
    return ad::scale(ad::mean(scores), T{-1});
}

template <typename T>
ad::Tensor<T> loss_cir(const ad::Tensor<T>& emb_rationale, const ad::Tensor<T>& emb_complement, double tau) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("loss_cir: temperature must be positive");
    }
    const auto cosines = ad::row_cosine(emb_rationale, emb_complement);
    return ad::logsumexp_all(ad::scale(cosines, static_cast<T>(1.0 / tau)));
}

template <typename T>
ad::Tensor<T> loss_rec(const ad::Tensor<T>& s, std::size_t num_users, std::span<const Interaction> batch,
                       std::span<const std::uint32_t> candidate_items) {
    if (batch.empty()) {
        throw std::invalid_argument("loss_rec: empty batch");
    }
    const std::size_t num_items = s.rows() - num_users;
    std::vector<std::uint32_t> candidates;
    if (candidate_items.empty()) {
        candidates.resize(num_items);
        for (std::uint32_t p = 0; p < num_items; ++p) {
            candidates[p] = static_cast<std::uint32_t>(num_users + p);
        }
    } else {
        std::vector<std::uint32_t> sorted(candidate_items.begin(), candidate_items.end());
        std::sort(sorted.begin(), sorted.end());
        for (const auto& x : batch) {
            if (!std::binary_search(sorted.begin(), sorted.end(), x.item)) {
                throw std::invalid_argument("loss_rec: positive item " + std::to_string(x.item) +
                                            " is not among the candidates");
            }
        }
        candidates = item_nodes(candidate_items, num_users);
    }
    std::vector<std::uint32_t> users, positives;
    users.reserve(batch.size());
    positives.reserve(batch.size());
    for (const auto& x : batch) {
        users.push_back(x.user);
        positives.push_back(static_cast<std::uint32_t>(num_users + x.item));
    }
    const auto u = ad::gather_rows(s, std::move(users));
    const auto logits = ad::matmul_nt(u, ad::gather_rows(s, std::move(candidates)));
    const auto normaliser = ad::logsumexp_rows(logits);
    const auto positive = ad::row_dot(u, ad::gather_rows(s, std::move(positives)));
    return ad::mean(ad::sub(normaliser, positive));
}

template <typename T>
ad::Tensor<T> loss_bpr(const ad::Tensor<T>& z, std::size_t num_users, std::span<const Triple> triples) {
    if (triples.empty()) {
        throw std::invalid_argument("loss_bpr: no triples");
    }
    std::vector<std::uint32_t> users, pos, neg;
    for (const auto& t : triples) {
        users.push_back(t.user);
        pos.push_back(static_cast<std::uint32_t>(num_users + t.positive));
        neg.push_back(static_cast<std::uint32_t>(num_users + t.negative));
    }
    const auto u = ad::gather_rows(z, std::move(users));
    const auto margin = ad::sub(ad::row_dot(u, ad::gather_rows(z, std::move(pos))),
                                ad::row_dot(u, ad::gather_rows(z, std::move(neg))));
    return ad::mean(ad::softplus(ad::scale(margin, T{-1})));
}

template <typename T>
ad::Tensor<T> loss_distill(const EmbeddingBundle<T>& student, const EmbeddingBundle<T>& teacher) {
    const std::pair<const char*, std::pair<const ad::Tensor<T>*, const ad::Tensor<T>*>> slots[] = {
        {"user", {&student.user, &teacher.user}},
        {"item", {&student.item, &teacher.item}},
        {"contrastive", {&student.contrastive, &teacher.contrastive}},
        {"subgraph", {&student.subgraph, &teacher.subgraph}},
    };
    ad::Tensor<T> total;
    for (const auto& [slot, pair] : slots) {
        const auto& [s, t] = pair;
        if (!s->defined() || !t->defined() || s->shape() != t->shape()) {
            throw ad::ShapeError(std::string("loss_distill: '") + slot + "' slot shapes differ (" +
                                 (s->defined() ? ad::shape_string(s->shape()) : "<none>") + " vs " +
                                 (t->defined() ? ad::shape_string(t->shape()) : "<none>") + ")");
        }
        const auto diff = ad::sub(*s, ad::detach(*t));
        const auto mse = ad::scale(ad::square_sum(diff), static_cast<T>(1.0 / static_cast<double>(diff.size())));
        total = total.defined() ? ad::add(total, mse) : mse;
    }
    return total;
}

nlohmann::json LossReport::to_json() const {
    return {{"rec", rec}, {"mae", mae}, {"distill", distill}, {"rd", rd},
            {"cir", cir}, {"reg", reg}, {"total", total}};
}

template <typename T>
TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights, const ad::ParameterSet<T>& params) {
    TotalLoss<T> out;
    ad::Tensor<T> sum;
    auto include = [&](const char* name, const ad::Tensor<T>& term, double weight, double& slot) {
        if (!term.defined()) {
            return;
        }
        const double value = static_cast<double>(term.item());
        if (!std::isfinite(value)) {
            throw ad::NumericError(std::string("total_loss: term '") + name + "' is not finite");
        }
        slot = value;
        if (weight == 0.0) {
            return;
        }
        out.report.total += weight * value;
        const auto weighted = weight == 1.0 ? term : ad::scale(term, static_cast<T>(weight));
        sum = sum.defined() ? ad::add(sum, weighted) : weighted;
    };
    include("rec", terms.rec, weights.rec, out.report.rec);
    include("mae", terms.mae, weights.mae, out.report.mae);
    include("distill", terms.distill, weights.distill, out.report.distill);
    include("rd", terms.rd, weights.rd, out.report.rd);
    include("cir", terms.cir, weights.cir, out.report.cir);
    include("reg", ad::frobenius_sq(params), weights.reg, out.report.reg);
    out.value = sum.defined() ? sum : ad::Tensor<T>::scalar(T{0});
    return out;
}

std::vector<std::string> loss_range_violations(const LossReport& r, std::size_t contrastive_rows, double tau,
                                               bool mae_bounded) {
    // slack for single-precision rounding
    auto slack = [](double v) { return 1e-5 * (1.0 + std::abs(v)); };
    std::vector<std::string> out;
    const std::pair<const char*, double> nonnegative[] = {
        {"rec", r.rec}, {"distill", r.distill}, {"rd", r.rd}, {"reg", r.reg}};
    for (const auto& [name, value] : nonnegative) {
        if (value < -slack(value)) {
            out.emplace_back(name);
        }
    }
    if (mae_bounded && r.mae < -slack(r.mae)) {
        out.emplace_back("mae");
    }
    if (contrastive_rows > 0 && r.cir != 0.0) {
        const double center = std::log(static_cast<double>(contrastive_rows));
        if (std::abs(r.cir - center) > 1.0 / tau + slack(r.cir)) {
            out.emplace_back("cir");
        }
    }
    return out;
}

#define RGTREC_INSTANTIATE_OBJECTIVES(T)                                                                            \
    template ad::Tensor<T> loss_mae<T>(const ad::Tensor<T>&, std::span<const Edge>, std::span<const std::uint32_t>, \
                                       std::size_t, std::size_t);                                                   \
    template ad::Tensor<T> loss_mae_literal<T>(const ad::Tensor<T>&, std::span<const Edge>);                        \
    template ad::Tensor<T> loss_cir<T>(const ad::Tensor<T>&, const ad::Tensor<T>&, double);                         \
    template ad::Tensor<T> loss_rec<T>(const ad::Tensor<T>&, std::size_t, std::span<const Interaction>,             \
                                       std::span<const std::uint32_t>);                                             \
    template ad::Tensor<T> loss_bpr<T>(const ad::Tensor<T>&, std::size_t, std::span<const Triple>);                 \
    template ad::Tensor<T> loss_distill<T>(const EmbeddingBundle<T>&, const EmbeddingBundle<T>&);                   \
    template TotalLoss<T> total_loss<T>(const LossTerms<T>&, const LossWeights&, const ad::ParameterSet<T>&);

RGTREC_INSTANTIATE_OBJECTIVES(float)
RGTREC_INSTANTIATE_OBJECTIVES(double)

#undef RGTREC_INSTANTIATE_OBJECTIVES

}  // namespace rgtrec
