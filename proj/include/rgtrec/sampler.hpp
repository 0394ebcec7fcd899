#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "rgtrec/attention.hpp"
#include "rgtrec/errors.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/rng.hpp"

namespace rgtrec {

enum class SubgraphKind { rationale, masked, complement };

std::string_view to_string(SubgraphKind kind);

struct SampledSubgraph {
    SubgraphKind kind = SubgraphKind::rationale;
    std::vector<std::uint32_t> edge_indices;  // in draw order
    double rate = 0.0;
};

// Floor added to inverted scores so that every edge keeps a chance of being
// retained.
inline constexpr double kInvertedScoreFloor = 1e-8;

// Gumbel top-k: draws k distinct indices, each step choosing among the rest
// with probability proportional to its weight. Indices come back in draw
// order. Zero weights are only drawn once positive weights are exhausted.
std::vector<std::uint32_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                               Rng& rng);

// round(rate · |E|)
std::size_t sample_size(double rate, std::size_t num_edges);

// max(p) − p + ε for every edge.
std::vector<double> inverted_scores(std::span<const double> probs);

SampledSubgraph sample_rationale(const EdgeScoreTable& scores, double rho_r, std::uint64_t seed);

// Retained edge set E_M, drawn against inverted scores so high-rationale edges
// are the likeliest to be masked out. Requires rho_r < rho_m < 1.
SampledSubgraph build_masked_graph(const EdgeScoreTable& scores, double rho_m, double rho_r, std::uint64_t seed);

// Small draw from the masking distribution. Requires rho_c ≤ rho_m / 4.
SampledSubgraph sample_complement(const EdgeScoreTable& scores, double rho_c, double rho_m, std::uint64_t seed);

// E \ E_M, ascending.
std::vector<std::uint32_t> masked_out_edges(const SampledSubgraph& masked, std::size_t num_edges);

void dump_subgraph(const std::filesystem::path& path, const SampledSubgraph& subgraph, const BipartiteGraph& g);

}  // namespace rgtrec
