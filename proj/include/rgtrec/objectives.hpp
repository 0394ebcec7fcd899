#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgtrec/graph_store.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec {

struct LossWeights {
    double rec = 1.0;       // only switched off by ablations
    double rd = 1.0;        // λ1, BPR rationale loss
    double cir = 0.005;     // λ2, complement independence
    double reg = 1e-4;      // λ3, ‖Θ‖²_F
    double distill = 0.1;
    double mae = 1.0;
    double tau = 0.5;

    void validate() const;
};

struct Triple {
    std::uint32_t user = 0;
    std::uint32_t positive = 0;  // item index
    std::uint32_t negative = 0;  // item index
};

// Masked-edge reconstruction: mean over E \ E_M of
//   −log σ(s_kᵀ s_k') + Σ_n −log σ(−s_kᵀ s_n)
// where `negative_items` holds `negatives_per_edge` item indices per edge.
// Returns a constant 0 when nothing was masked out.
template <typename T>
ad::Tensor<T> loss_mae(const ad::Tensor<T>& s, std::span<const Edge> masked_out,
                       std::span<const std::uint32_t> negative_items, std::size_t negatives_per_edge,
                       std::size_t num_users);

// Unbounded form: mean over E \ E_M of −s_kᵀ s_k'.
template <typename T>
ad::Tensor<T> loss_mae_literal(const ad::Tensor<T>& s, std::span<const Edge> masked_out);

// log Σ_k exp(cos(e^R_k, e^C_k) / τ)
template <typename T>
ad::Tensor<T> loss_cir(const ad::Tensor<T>& emb_rationale, const ad::Tensor<T>& emb_complement, double tau);

// Mean softmax cross-entropy of each (user, item) pair against the candidate
// items. An empty candidate list means the full item set.
template <typename T>
ad::Tensor<T> loss_rec(const ad::Tensor<T>& s, std::size_t num_users, std::span<const Interaction> batch,
                       std::span<const std::uint32_t> candidate_items);

// Mean of −log σ(ȳ(u, p⁺) − ȳ(u, p⁻)).
template <typename T>
ad::Tensor<T> loss_bpr(const ad::Tensor<T>& z, std::size_t num_users, std::span<const Triple> triples);

template <typename T>
struct EmbeddingBundle {
    ad::Tensor<T> user;
    ad::Tensor<T> item;
    ad::Tensor<T> contrastive;
    ad::Tensor<T> subgraph;
};

// Sum of the four slot-wise mean squared errors; the teacher side is detached.
template <typename T>
ad::Tensor<T> loss_distill(const EmbeddingBundle<T>& student, const EmbeddingBundle<T>& teacher);

struct LossReport {
    double rec = 0.0;
    double mae = 0.0;
    double distill = 0.0;
    double rd = 0.0;
    double cir = 0.0;
    double reg = 0.0;  // unweighted ‖Θ‖²_F
    double total = 0.0;

    nlohmann::json to_json() const;
};

template <typename T>
struct LossTerms {
    ad::Tensor<T> rec;
    ad::Tensor<T> mae;
    ad::Tensor<T> rd;
    ad::Tensor<T> cir;
    ad::Tensor<T> distill;  // may be undefined
};

template <typename T>
struct TotalLoss {
    ad::Tensor<T> value;
    LossReport report;
};

// L = rec·L_Rec + λ_mae·L_MAE + λ_distill·L_distill + λ1·L_RD + λ2·L_CIR + λ3·‖Θ‖²_F.
// Throws ad::NumericError naming the first non-finite term.
template <typename T>
TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights, const ad::ParameterSet<T>& params);

// Names of the terms in `r` outside their admissible range: below zero for
// the likelihood, squared-error and norm terms, and outside ln n ± 1/τ for the
// complement term over n rows. The literal reconstruction form is unbounded
// and is skipped when `mae_bounded` is false.
std::vector<std::string> loss_range_violations(const LossReport& r, std::size_t contrastive_rows, double tau,
                                               bool mae_bounded);

}  // namespace rgtrec
