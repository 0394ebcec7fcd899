#include "rgtrec/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace rgtrec {

std::string_view to_string(SubgraphKind kind) {
    switch (kind) {
        case SubgraphKind::rationale: return "rationale";
        case SubgraphKind::masked: return "masked";
        case SubgraphKind::complement: return "complement";
    }
    return "?";
}

std::vector<std::uint32_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                               Rng& rng) {
    if (k > weights.size()) {
        throw std::invalid_argument("weighted sample: " + std::to_string(k) + " draws from " +
                                    std::to_string(weights.size()) + " items");
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Keyed {
        double key;
        std::uint32_t index;
    };
    std::vector<Keyed> keys(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
            throw std::invalid_argument("weighted sample: weight " + std::to_string(i) + " is negative or non-finite");
        }
        double u = unit(rng);
        while (u <= 0.0) {
            u = unit(rng);
        }
        const double gumbel = -std::log(-std::log(u));
        const double key = weights[i] > 0.0 ? std::log(weights[i]) + gumbel : -std::numeric_limits<double>::infinity();
        keys[i] = {key, static_cast<std::uint32_t>(i)};
    }
    auto order = [](const Keyed& a, const Keyed& b) { return a.key > b.key || (a.key == b.key && a.index < b.index); };
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(), order);
    std::vector<std::uint32_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = keys[i].index;
    }
    return out;
}

std::size_t sample_size(double rate, std::size_t num_edges) {
    return static_cast<std::size_t>(std::llround(rate * static_cast<double>(num_edges)));
}

std::vector<double> inverted_scores(std::span<const double> probs) {
    if (probs.empty()) {
        return {};
    }
    const double peak = *std::max_element(probs.begin(), probs.end());
    std::vector<double> out(probs.size());
    std::transform(probs.begin(), probs.end(), out.begin(),
                   [peak](double p) { return peak - p + kInvertedScoreFloor; });
    return out;
}

namespace {

void check_rate(const char* name, double rate) {
    if (!(rate > 0.0 && rate <= 1.0)) {
        throw ConfigError(std::string(name) + " must lie in (0, 1], got " + std::to_string(rate));
    }
}

}  // namespace

SampledSubgraph sample_rationale(const EdgeScoreTable& scores, double rho_r, std::uint64_t seed) {
    check_rate("rho_r", rho_r);
    const std::size_t k = sample_size(rho_r, scores.probs.size());
    if (k < 1) {
        throw ConfigError("rho_r · |E| rounds to zero edges (|E| = " + std::to_string(scores.probs.size()) + ")");
    }
    Rng rng = make_rng(seed, "rationale");
    return {SubgraphKind::rationale, weighted_sample_without_replacement(scores.probs, k, rng), rho_r};
}

SampledSubgraph build_masked_graph(const EdgeScoreTable& scores, double rho_m, double rho_r, std::uint64_t seed) {
    check_rate("rho_m", rho_m);
    if (rho_m <= rho_r) {
        throw ConfigError("rho_m (" + std::to_string(rho_m) + ") must exceed rho_r (" + std::to_string(rho_r) +
                          "): the masked graph keeps more edges than the rationale graph");
    }
    const std::size_t k = sample_size(rho_m, scores.probs.size());
    Rng rng = make_rng(seed, "masked");
    const auto inverted = inverted_scores(scores.probs);
    return {SubgraphKind::masked, weighted_sample_without_replacement(inverted, k, rng), rho_m};
}

SampledSubgraph sample_complement(const EdgeScoreTable& scores, double rho_c, double rho_m, std::uint64_t seed) {
    check_rate("rho_c", rho_c);
    if (rho_c > rho_m / 4.0) {
        throw ConfigError("rho_c (" + std::to_string(rho_c) + ") must not exceed rho_m / 4 (" +
                          std::to_string(rho_m / 4.0) + ")");
    }
    const std::size_t k = sample_size(rho_c, scores.probs.size());
    Rng rng = make_rng(seed, "complement");
    const auto inverted = inverted_scores(scores.probs);
    return {SubgraphKind::complement, weighted_sample_without_replacement(inverted, k, rng), rho_c};
}

std::vector<std::uint32_t> masked_out_edges(const SampledSubgraph& masked, std::size_t num_edges) {
    std::vector<char> kept(num_edges, 0);
    for (const auto e : masked.edge_indices) {
        kept.at(e) = 1;
    }
    std::vector<std::uint32_t> out;
    for (std::uint32_t e = 0; e < num_edges; ++e) {
        if (!kept[e]) {
            out.push_back(e);
        }
    }
    return out;
}

void dump_subgraph(const std::filesystem::path& path, const SampledSubgraph& subgraph, const BipartiteGraph& g) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write subgraph dump '" + path.string() + "'");
    }
    out << "edge\tuser\titem\tkind\n";
    for (const auto e : subgraph.edge_indices) {
        const auto& edge = g.edges().at(e);
        out << e << '\t' << edge.user_node << '\t' << (edge.item_node - g.num_users()) << '\t'
            << to_string(subgraph.kind) << '\n';
    }
}

}  // namespace rgtrec
