#include "rgtrec/topology.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "rgtrec/parallel.hpp"
#include "rgtrec/rng.hpp"

namespace rgtrec {

AnchorSet sample_anchors(const BipartiteGraph& g, std::size_t count, std::uint64_t seed) {
    const std::size_t n = g.num_nodes();
    if (count > n) {
        throw std::invalid_argument("sample_anchors: " + std::to_string(count) + " anchors requested from " +
                                    std::to_string(n) + " nodes");
    }
    std::vector<std::uint32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0U);
    Rng rng = make_rng(seed, "anchors");
    // Partial Fisher–Yates: the first `count` slots are the sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return AnchorSet{std::move(pool), seed};
}

namespace {

void dijkstra_from(const BipartiteGraph& g, std::uint32_t source, std::uint32_t limit,
                   std::vector<std::uint32_t>& dist) {
    using Entry = std::pair<std::uint32_t, std::uint32_t>;  // (distance, node)
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
    std::fill(dist.begin(), dist.end(), kUnreachable);
    dist[source] = 0;
    frontier.emplace(0, source);
    while (!frontier.empty()) {
        const auto [d, node] = frontier.top();
        frontier.pop();
        if (d != dist[node] || d >= limit) {
            continue;
        }
        for (const auto next : g.neighbors(node)) {
            const std::uint32_t candidate = d + 1;  // unit edge weight
            if (candidate < dist[next]) {
                dist[next] = candidate;
                frontier.emplace(candidate, next);
            }
        }
    }
}

}  // namespace

DistanceTable shortest_paths(const BipartiteGraph& g, const AnchorSet& anchors, std::uint32_t cutoff,
                             std::size_t threads) {
    if (cutoff < 1) {
        throw std::invalid_argument("shortest_paths: hop cutoff must be at least 1");
    }
    DistanceTable table;
    table.num_nodes = g.num_nodes();
    table.num_anchors = anchors.size();
    table.cutoff = cutoff;
    table.hops.assign(table.num_nodes * table.num_anchors, kUnreachable);
    parallel_for(anchors.size(), threads, [&](std::size_t a) {
        std::vector<std::uint32_t> dist(table.num_nodes);
        dijkstra_from(g, anchors.nodes[a], cutoff + 1, dist);
        for (std::size_t k = 0; k < table.num_nodes; ++k) {
            table.hops[k * table.num_anchors + a] = dist[k];
        }
    });
    return table;
}

double correlation_weight(std::uint32_t hops, std::uint32_t cutoff) {
    if (hops == kUnreachable || hops > cutoff) {
        return 0.0;
    }
    return 1.0 / (static_cast<double>(hops) + 1.0);
}

CorrelationWeights correlation_weights(const DistanceTable& distances) {
    CorrelationWeights omega;
    omega.num_nodes = distances.num_nodes;
    omega.num_anchors = distances.num_anchors;
    omega.cutoff = distances.cutoff;
    omega.weights.resize(distances.hops.size());
    std::transform(distances.hops.begin(), distances.hops.end(), omega.weights.begin(),
                   [cutoff = distances.cutoff](std::uint32_t d) { return correlation_weight(d, cutoff); });
    return omega;
}

namespace {

constexpr char kDistanceMagic[4] = {'R', 'G', 'T', 'D'};

template <typename V>
void write_raw(std::ofstream& out, const V& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
bool read_raw(std::ifstream& in, V& value) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(&value), sizeof(V)));
}

}  // namespace

void save_distance_table(const std::filesystem::path& path, const DistanceTable& table,
                         std::uint64_t graph_fingerprint, std::uint64_t anchor_seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write distance cache '" + path.string() + "'");
    }
    out.write(kDistanceMagic, 4);
    write_raw(out, graph_fingerprint);
    write_raw(out, anchor_seed);
    write_raw(out, table.cutoff);
    write_raw(out, static_cast<std::uint64_t>(table.num_nodes));
    write_raw(out, static_cast<std::uint64_t>(table.num_anchors));
    out.write(reinterpret_cast<const char*>(table.hops.data()),
              static_cast<std::streamsize>(table.hops.size() * sizeof(std::uint32_t)));
}

std::optional<DistanceTable> load_distance_table(const std::filesystem::path& path,
                                                 std::uint64_t graph_fingerprint, std::uint64_t anchor_seed,
                                                 std::uint32_t cutoff) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    char magic[4];
    std::uint64_t fp = 0, seed = 0, nodes = 0, anchors = 0;
    std::uint32_t stored_cutoff = 0;
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kDistanceMagic) || !read_raw(in, fp) ||
        !read_raw(in, seed) || !read_raw(in, stored_cutoff) || !read_raw(in, nodes) || !read_raw(in, anchors)) {
        return std::nullopt;
    }
    if (fp != graph_fingerprint || seed != anchor_seed || stored_cutoff != cutoff) {
        return std::nullopt;
    }
    DistanceTable table;
    table.num_nodes = nodes;
    table.num_anchors = anchors;
    table.cutoff = cutoff;
    table.hops.resize(nodes * anchors);
    if (!in.read(reinterpret_cast<char*>(table.hops.data()),
                 static_cast<std::streamsize>(table.hops.size() * sizeof(std::uint32_t)))) {
        return std::nullopt;
    }
    return table;
}

// ---- propagation layers ------------------------------------------------------------

template <typename T>
TopologyEncoder<T>::TopologyEncoder(AnchorSet anchors, const CorrelationWeights& omega)
    : anchors_(std::move(anchors)) {
    if (omega.num_anchors != anchors_.size()) {
        throw std::invalid_argument("TopologyEncoder: weights cover " + std::to_string(omega.num_anchors) +
                                    " anchors, anchor set has " + std::to_string(anchors_.size()));
    }
    const std::size_t n = omega.num_nodes, m = omega.num_anchors;
    std::vector<T> scaled(n * m);
    self_factors_.assign(n, T{0});
    const double inv = m > 0 ? 1.0 / static_cast<double>(m) : 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double row = 0.0;
        for (std::size_t a = 0; a < m; ++a) {
            const double w = omega.at(k, a) * inv;
            scaled[k * m + a] = static_cast<T>(w);
            row += w;
        }
        self_factors_[k] = static_cast<T>(row);
    }
    scaled_weights_ = ad::Tensor<T>({n, m}, std::move(scaled));
}

template <typename T>
ad::Tensor<T> TopologyEncoder<T>::layer(const ad::Tensor<T>& h_prev, const ad::Tensor<T>& weight) const {
    const std::size_t d = h_prev.cols();
    if (weight.rank() != 2 || weight.rows() != d || weight.cols() != 2 * d) {
        throw ad::ShapeError("pgnn_layer: transform of shape " + ad::shape_string(weight.shape()) +
                             " does not map [h ‖ h_a] of width " + std::to_string(2 * d) + " to " +
                             std::to_string(d));
    }
    if (h_prev.rows() != scaled_weights_.rows()) {
        throw ad::ShapeError("pgnn_layer: embeddings " + ad::shape_string(h_prev.shape()) + " vs weights over " +
                             std::to_string(scaled_weights_.rows()) + " nodes");
    }
    // Σ_a ω/|A| · [h_k ‖ h_a] = [c_k h_k ‖ (Ω/|A|) H_A]
    const auto anchor_rows = ad::gather_rows(h_prev, anchors_.nodes);
    const auto own = ad::scale_rows(h_prev, self_factors_);
    const auto pooled = ad::matmul(scaled_weights_, anchor_rows);
    return ad::matmul_nt(ad::concat_cols(own, pooled), weight);
}

template <typename T>
ad::Tensor<T> TopologyEncoder<T>::encode(const ad::Tensor<T>& h_id, const TopoParams<T>& params) const {
    if (params.layers.empty()) {
        throw std::invalid_argument("topo_encode: at least one propagation layer is required");
    }
    ad::Tensor<T> h = h_id;
    for (const auto& w : params.layers) {
        h = layer(h, w);
    }
    return ad::add(h_id, h);
}

template <typename T>
ad::Tensor<T> pgnn_layer(const ad::Tensor<T>& h_prev, const AnchorSet& anchors, const CorrelationWeights& omega,
                         const ad::Tensor<T>& weight) {
    return TopologyEncoder<T>(anchors, omega).layer(h_prev, weight);
}

template <typename T>
ad::Tensor<T> topo_encode(const ad::Tensor<T>& h_id, const AnchorSet& anchors, const CorrelationWeights& omega,
                          const TopoParams<T>& params) {
    return TopologyEncoder<T>(anchors, omega).encode(h_id, params);
}

template class TopologyEncoder<float>;
template class TopologyEncoder<double>;
template ad::Tensor<float> pgnn_layer(const ad::Tensor<float>&, const AnchorSet&, const CorrelationWeights&,
                                      const ad::Tensor<float>&);
template ad::Tensor<double> pgnn_layer(const ad::Tensor<double>&, const AnchorSet&, const CorrelationWeights&,
                                       const ad::Tensor<double>&);
template ad::Tensor<float> topo_encode(const ad::Tensor<float>&, const AnchorSet&, const CorrelationWeights&,
                                       const TopoParams<float>&);
template ad::Tensor<double> topo_encode(const ad::Tensor<double>&, const AnchorSet&, const CorrelationWeights&,
                                        const TopoParams<double>&);

}  // namespace rgtrec
