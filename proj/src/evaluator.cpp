#include "rgtrec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "rgtrec/parallel.hpp"

namespace rgtrec {

std::vector<double> score_all_items(const DenseMatrix& s, std::size_t num_users, std::uint32_t user,
                                    std::span<const std::uint32_t> train_items) {
    const std::size_t num_items = s.rows - num_users;
    const auto u = s.row(user);
    std::vector<double> scores(num_items);
    for (std::size_t p = 0; p < num_items; ++p) {
        const auto item = s.row(num_users + p);
        scores[p] = std::inner_product(u.begin(), u.end(), item.begin(), 0.0);
    }
    for (const auto p : train_items) {
        scores.at(p) = -std::numeric_limits<double>::infinity();
    }
    return scores;
}

std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k) {
    std::vector<std::uint32_t> ids;
    ids.reserve(scores.size());
    for (std::uint32_t p = 0; p < scores.size(); ++p) {
        if (scores[p] != -std::numeric_limits<double>::infinity()) {
            ids.push_back(p);
        }
    }
    k = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&scores](std::uint32_t a, std::uint32_t b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    ids.resize(k);
    return ids;
}

namespace {

void require_relevant(std::span<const std::uint32_t> relevant) {
    if (relevant.empty()) {
        throw std::invalid_argument("ranking metric needs at least one relevant item");
    }
}

}  // namespace

double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k) {
    require_relevant(relevant);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
        hits += std::binary_search(relevant.begin(), relevant.end(), ranked[r]) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant, std::size_t k) {
    require_relevant(relevant);
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
        if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) {
            dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
    }
    double ideal = 0.0;
    for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) {
        ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
    return dcg / ideal;
}

namespace {

double value_at(const std::vector<std::size_t>& cutoffs, const std::vector<double>& values, std::size_t k) {
    const auto it = std::find(cutoffs.begin(), cutoffs.end(), k);
    if (it == cutoffs.end()) {
        throw std::out_of_range("cutoff " + std::to_string(k) + " was not evaluated");
    }
    return values[static_cast<std::size_t>(it - cutoffs.begin())];
}

}  // namespace

double RankingResult::recall_at(std::size_t k) const { return value_at(cutoffs, recall, k); }
double RankingResult::ndcg_at(std::size_t k) const { return value_at(cutoffs, ndcg, k); }

RankingResult evaluate(const DenseMatrix& s, const InteractionDataset& ds, Split split, std::size_t threads,
                       const std::vector<std::size_t>& cutoffs) {
    if (s.rows != ds.num_users + ds.num_items) {
        throw std::invalid_argument("evaluate: embedding rows " + std::to_string(s.rows) + " != users + items " +
                                    std::to_string(ds.num_users + ds.num_items));
    }
    if (cutoffs.empty()) {
        throw std::invalid_argument("evaluate: no cutoffs");
    }
    const auto train = ds.items_by_user(Split::train);
    const auto target = ds.items_by_user(split);
    const std::size_t deepest = *std::max_element(cutoffs.begin(), cutoffs.end());

    std::vector<std::uint32_t> evaluated;
    for (std::uint32_t u = 0; u < ds.num_users; ++u) {
        if (!target[u].empty()) {
            evaluated.push_back(u);
        }
    }
    RankingResult result;
    result.cutoffs = cutoffs;
    result.users.resize(evaluated.size());
    parallel_for(evaluated.size(), threads, [&](std::size_t i) {
        const std::uint32_t u = evaluated[i];
        const auto scores = score_all_items(s, ds.num_users, u, train[u]);
        UserRanking ranking;
        ranking.user = u;
        ranking.relevant = target[u].size();
        ranking.top = top_k(scores, deepest);
        for (const auto k : cutoffs) {
            ranking.recall.push_back(recall_at_k(ranking.top, target[u], k));
            ranking.ndcg.push_back(ndcg_at_k(ranking.top, target[u], k));
        }
        result.users[i] = std::move(ranking);
    });
    result.recall.assign(cutoffs.size(), 0.0);
    result.ndcg.assign(cutoffs.size(), 0.0);
    for (const auto& ranking : result.users) {
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
            result.recall[c] += ranking.recall[c];
            result.ndcg[c] += ranking.ndcg[c];
        }
    }
    if (!result.users.empty()) {
        const double n = static_cast<double>(result.users.size());
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
            result.recall[c] /= n;
            result.ndcg[c] /= n;
        }
    }
    return result;
}

void write_metrics_csv(std::ostream& out, Split split, const RankingResult& result, bool header) {
    if (header) {
        out << "split,K,recall,ndcg\n";
    }
    out.precision(6);
    out << std::fixed;
    for (std::size_t c = 0; c < result.cutoffs.size(); ++c) {
        out << to_string(split) << ',' << result.cutoffs[c] << ',' << result.recall[c] << ',' << result.ndcg[c]
            << '\n';
    }
}

void write_per_user_tsv(std::ostream& out, const RankingResult& result, const InteractionDataset& ds) {
    out << "user\tK\trecall\tndcg\ttop_items\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& ranking : result.users) {
        for (std::size_t c = 0; c < result.cutoffs.size(); ++c) {
            out << ds.user_tokens.at(ranking.user) << '\t' << result.cutoffs[c] << '\t' << ranking.recall[c] << '\t'
                << ranking.ndcg[c] << '\t';
            const std::size_t k = std::min(result.cutoffs[c], ranking.top.size());
            for (std::size_t r = 0; r < k; ++r) {
                out << (r > 0 ? " " : "") << ds.item_tokens.at(ranking.top[r]);
            }
            out << '\n';
        }
    }
}

}  // namespace rgtrec
