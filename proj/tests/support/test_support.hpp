#pragma once

// Shared fixtures and oracles for the unit tests.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rgtrec/graph_store.hpp"
#include "rgtrec/rng.hpp"
#include "rgtrec/tensor.hpp"

namespace rgtrec::testing {

using T64 = ad::Tensor<double>;

T64 random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0, bool requires_grad = true);

// Relative error of the analytic gradient against central differences,
// ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-8) taken over all leaves jointly.
double gradcheck(const std::vector<T64>& leaves, const std::function<T64()>& loss, double step = 1e-5);

inline constexpr double kGradTolerance = 1e-4;

// Collapses any tensor to a scalar through fixed random weights so that every
// output entry contributes a distinct gradient.
T64 weighted_sum(const T64& x, Rng& rng);

// Bipartite graph where each user–item pair is present with probability
// `density`; every node gets at least one edge when `connect_all` is set.
BipartiteGraph random_graph(std::size_t users, std::size_t items, double density, Rng& rng,
                            bool connect_all = true);

// Unsplit dataset with the given interactions.
InteractionDataset make_dataset(std::size_t users, std::size_t items, const std::vector<Interaction>& pairs);

// All-pairs hop distances by breadth-first search, kUnreachable-style max for
// disconnected pairs.
std::vector<std::vector<std::uint32_t>> bfs_distances(const BipartiteGraph& g);

// Dense (|V| × |V|) 0/1 adjacency.
std::vector<std::vector<double>> dense_adjacency(const BipartiteGraph& g);

// Fresh empty directory under the system temp path.
std::filesystem::path temp_dir(const std::string& tag);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace rgtrec::testing
