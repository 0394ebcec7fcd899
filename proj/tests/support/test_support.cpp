#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <limits>
#include <numeric>

#include <unistd.h>

namespace rgtrec::testing {

T64 random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale, bool requires_grad) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    std::vector<double> values(rows * cols);
    for (auto& v : values) {
        v = dist(rng);
    }
    return T64({rows, cols}, std::move(values), requires_grad);
}

double gradcheck(const std::vector<T64>& leaves, const std::function<T64()>& loss, double step) {
    for (auto leaf : leaves) {
        leaf.zero_grad();
    }
    ad::backward(loss());
    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (auto leaf : leaves) {
        std::vector<double> analytic(leaf.size(), 0.0);
        if (leaf.has_grad()) {
            std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        }
        auto values = leaf.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss().item();
            values[i] = saved - step;
            const double down = loss().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            diff_sq += (analytic[i] - numeric) * (analytic[i] - numeric);
            analytic_sq += analytic[i] * analytic[i];
            numeric_sq += numeric * numeric;
        }
        leaf.zero_grad();
    }
    return std::sqrt(diff_sq) / std::max(std::sqrt(analytic_sq) + std::sqrt(numeric_sq), 1e-8);
}

T64 weighted_sum(const T64& x, Rng& rng) {
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    std::vector<double> w(x.size());
    for (auto& v : w) {
        v = dist(rng);
    }
    return ad::sum(ad::mul(x, T64(x.shape(), std::move(w))));
}

BipartiteGraph random_graph(std::size_t users, std::size_t items, double density, Rng& rng, bool connect_all) {
    std::bernoulli_distribution keep(density);
    std::vector<std::vector<bool>> present(users, std::vector<bool>(items, false));
    for (std::size_t u = 0; u < users; ++u) {
        for (std::size_t p = 0; p < items; ++p) {
            present[u][p] = keep(rng);
        }
    }
    if (connect_all) {
        std::uniform_int_distribution<std::size_t> any_item(0, items - 1), any_user(0, users - 1);
        for (std::size_t u = 0; u < users; ++u) {
            if (std::none_of(present[u].begin(), present[u].end(), [](bool b) { return b; })) {
                present[u][any_item(rng)] = true;
            }
        }
        for (std::size_t p = 0; p < items; ++p) {
            bool any = false;
            for (std::size_t u = 0; u < users; ++u) {
                any = any || present[u][p];
            }
            if (!any) {
                present[any_user(rng)][p] = true;
            }
        }
    }
    std::vector<Edge> edges;
    for (std::size_t u = 0; u < users; ++u) {
        for (std::size_t p = 0; p < items; ++p) {
            if (present[u][p]) {
                edges.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(users + p)});
            }
        }
    }
    return BipartiteGraph(users, items, std::move(edges));
}

InteractionDataset make_dataset(std::size_t users, std::size_t items, const std::vector<Interaction>& pairs) {
    InteractionDataset ds;
    ds.num_users = users;
    ds.num_items = items;
    ds.interactions = pairs;
    for (std::size_t u = 0; u < users; ++u) {
        ds.user_tokens.push_back("u" + std::to_string(u));
    }
    for (std::size_t p = 0; p < items; ++p) {
        ds.item_tokens.push_back("i" + std::to_string(p));
    }
    return ds;
}

std::vector<std::vector<std::uint32_t>> bfs_distances(const BipartiteGraph& g) {
    const std::size_t n = g.num_nodes();
    const auto inf = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (const auto& e : g.edges()) {
        adj[e.user_node].push_back(e.item_node);
        adj[e.item_node].push_back(e.user_node);
    }
    std::vector<std::vector<std::uint32_t>> dist(n, std::vector<std::uint32_t>(n, inf));
    for (std::size_t s = 0; s < n; ++s) {
        std::deque<std::uint32_t> queue{static_cast<std::uint32_t>(s)};
        dist[s][s] = 0;
        while (!queue.empty()) {
            const auto v = queue.front();
            queue.pop_front();
            for (const auto w : adj[v]) {
                if (dist[s][w] == inf) {
                    dist[s][w] = dist[s][v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    return dist;
}

std::vector<std::vector<double>> dense_adjacency(const BipartiteGraph& g) {
    std::vector<std::vector<double>> a(g.num_nodes(), std::vector<double>(g.num_nodes(), 0.0));
    for (const auto& e : g.edges()) {
        a[e.user_node][e.item_node] = 1.0;
        a[e.item_node][e.user_node] = 1.0;
    }
    return a;
}

std::filesystem::path temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("rgtrec_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace rgtrec::testing
