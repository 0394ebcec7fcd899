#pragma once

// All-rank top-K evaluation: every item the user has not trained on is a
// candidate.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "rgtrec/graph_store.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec {

struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values).subspan(r * cols, cols);
    }
};

template <typename T>
DenseMatrix to_dense(const ad::Tensor<T>& t) {
    return DenseMatrix{t.rows(), t.cols(), std::vector<double>(t.values().begin(), t.values().end())};
}

inline const std::vector<std::size_t> kDefaultCutoffs{10, 20, 40};

// ŷ(u, p) = s_uᵀ s_p for every item, with the user's train items at −∞.
// `train_items` must be sorted.
std::vector<double> score_all_items(const DenseMatrix& s, std::size_t num_users, std::uint32_t user,
                                    std::span<const std::uint32_t> train_items);

// Highest scores first, ties broken by ascending item id; −∞ entries never
// appear.
std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k);

// `relevant` must be sorted and non-empty.
double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k);
double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k);

struct UserRanking {
    std::uint32_t user = 0;
    std::size_t relevant = 0;
    std::vector<std::uint32_t> top;  // length max(cutoffs)
    std::vector<double> recall;      // per cutoff
    std::vector<double> ndcg;
};

struct RankingResult {
    std::vector<std::size_t> cutoffs;
    std::vector<UserRanking> users;  // only users with ≥ 1 relevant item
    std::vector<double> recall;      // macro averages per cutoff
    std::vector<double> ndcg;

    double recall_at(std::size_t k) const;
    double ndcg_at(std::size_t k) const;
};

// `s` holds user rows followed by item rows.
RankingResult evaluate(const DenseMatrix& s, const InteractionDataset& ds, Split split, std::size_t threads = 1,
                       const std::vector<std::size_t>& cutoffs = kDefaultCutoffs);

// CSV with header split,K,recall,ndcg.
void write_metrics_csv(std::ostream& out, Split split, const RankingResult& result, bool header = true);
// user, K, recall, ndcg, top items (space separated tokens).
void write_per_user_tsv(std::ostream& out, const RankingResult& result, const InteractionDataset& ds);

}  // namespace rgtrec
