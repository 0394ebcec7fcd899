#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "rgtrec/attention.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace rgtrec;
using namespace rgtrec::testing;

namespace {

AttentionParams<double> random_params(std::size_t dim, std::size_t heads, Rng& rng, bool requires_grad = false) {
    AttentionParams<double> p;
    p.dim = dim;
    p.heads = heads;
    p.query = random_tensor(dim, dim, rng, 1.0, requires_grad);
    p.key = random_tensor(dim, dim, rng, 1.0, requires_grad);
    p.value = random_tensor(dim, dim, rng, 1.0, requires_grad);
    p.output = random_tensor(dim, dim, rng, 1.0, requires_grad);
    return p;
}

T64 constant(std::size_t rows, std::size_t cols, double v) {
    return T64({rows, cols}, std::vector<double>(rows * cols, v));
}

T64 identity(std::size_t d) {
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        v[i * d + i] = 1.0;
    }
    return T64({d, d}, v);
}

}  // namespace

TEST_CASE("init_attention bounds and divisibility") {
    Rng rng(1);
    const auto p = init_attention<double>(16, 4, rng);
    for (const auto* t : {&p.query, &p.key, &p.value, &p.output}) {
        CHECK(t->shape() == ad::Shape{16, 16});
        for (const auto v : t->values()) {
            CHECK(std::abs(v) <= 0.25);
        }
    }
    CHECK_THROWS_AS(init_attention<double>(10, 4, rng), std::invalid_argument);
}

TEST_CASE("singleton neighbourhood and symmetric keys") {
    Rng rng(2);
    // u0 — p0, u1 — p0 and u1 — p1
    const BipartiteGraph g(2, 2, {{0, 2}, {1, 2}, {1, 3}});
    const auto p = random_params(4, 2, rng);
    const auto alpha = attention_scores(random_tensor(4, 4, rng, 1.0, false), g, p);
    const auto index = g.segment_index();
    for (std::size_t e = 0; e < index->num_entries(); ++e) {
        if (g.degree(index->src[e]) == 1) {
            CHECK(alpha.at(e, 0) == doctest::Approx(1.0));
            CHECK(alpha.at(e, 1) == doctest::Approx(1.0));
        }
    }
    // Equal key embeddings for every neighbour give uniform attention.
    const T64 h({4, 4}, {0.1, 0.2, 0.3, 0.4,  //
                         0.5, 0.6, 0.7, 0.8,  //
                         1.0, 1.0, 1.0, 1.0,  //
                         1.0, 1.0, 1.0, 1.0});
    const auto same_keys = attention_scores(h, g, p);
    for (std::size_t e = 0; e < index->num_entries(); ++e) {
        if (index->src[e] == 1) {  // u1 sees p0 and p1 with identical embeddings
            CHECK(same_keys.at(e, 0) == doctest::Approx(0.5));
            CHECK(same_keys.at(e, 1) == doctest::Approx(0.5));
        }
    }
}

TEST_CASE("attention scores match brute-force evaluation") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = make_rng(seed, "alpha-oracle");
        const auto g = random_graph(2 + seed % 3, 3, 0.5, rng);
        const std::size_t heads = 1 + seed % 2;
        const auto p = random_params(4, heads, rng);
        const auto h = random_tensor(g.num_nodes(), 4, rng, 1.0, false);
        const auto alpha = attention_scores(h, g, p);
        const auto oracle = brute_force_alpha(h, g, p);
        const auto index = g.segment_index();
        REQUIRE(alpha.rows() == index->num_entries());
        for (std::size_t e = 0; e < index->num_entries(); ++e) {
            const auto& expected = oracle.at({index->src[e], index->dst[e]});
            for (std::size_t head = 0; head < heads; ++head) {
                CHECK(std::abs(alpha.at(e, head) - expected[head]) < 1e-6);
            }
        }
    }
}

TEST_CASE("edge probabilities match brute-force evaluation") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = make_rng(seed, "prob-oracle");
        const auto g = random_graph(4, 5, 0.4, rng);
        const auto p = random_params(4, 2, rng);
        const auto h = random_tensor(g.num_nodes(), 4, rng, 1.0, false);
        const auto table = edge_rationale_probs(attention_scores(h, g, p), g);
        const auto oracle = brute_force_alpha(h, g, p);
        std::vector<double> expected;
        for (const auto& e : g.edges()) {
            const auto& fwd = oracle.at({e.user_node, e.item_node});
            const auto& bwd = oracle.at({e.item_node, e.user_node});
            double mean = 0.0;
            for (std::size_t head = 0; head < 2; ++head) {
                mean += (fwd[head] + bwd[head]) / 2.0 / 2.0;
            }
            expected.push_back(mean);
        }
        const double total = std::accumulate(expected.begin(), expected.end(), 0.0);
        REQUIRE(table.probs.size() == g.num_edges());
        double sum = 0.0;
        for (std::size_t e = 0; e < expected.size(); ++e) {
            CHECK(std::abs(table.probs[e] - expected[e] / total) < 1e-6);
            CHECK(table.probs[e] >= 0.0);
            sum += table.probs[e];
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("edge probability examples") {
    const BipartiteGraph single(1, 1, {{0, 1}});
    const std::vector<double> two_heads{0.7, 0.3, 0.2, 0.8};
    const auto one = edge_rationale_probs(two_heads, 2, single);
    REQUIRE(one.probs.size() == 1);
    CHECK(one.probs[0] == doctest::Approx(1.0));

    Rng rng(5);
    const auto g = random_graph(3, 3, 0.6, rng);
    const auto index = g.segment_index();
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::vector<double> single_head(index->num_entries()), repeated;
    for (auto& v : single_head) {
        v = u(rng);
        for (int h = 0; h < 3; ++h) {
            repeated.push_back(v);
        }
    }
    const auto a = edge_rationale_probs(single_head, 1, g);
    const auto b = edge_rationale_probs(repeated, 3, g);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        CHECK(a.probs[e] == doctest::Approx(b.probs[e]));
    }
    CHECK_THROWS(edge_rationale_probs(std::vector<double>(index->num_entries(), 0.0), 1, g));
}

TEST_CASE("segment softmax ignores a per-node shift") {
    auto rng = make_rng(6, "shift");
    const auto g = random_graph(4, 4, 0.5, rng);
    const auto index = g.segment_index();
    const auto raw = random_tensor(index->num_entries(), 2, rng, 2.0, false);
    std::vector<double> shifted(raw.values().begin(), raw.values().end());
    for (std::size_t e = 0; e < index->num_entries(); ++e) {
        const double c = 10.0 * static_cast<double>(index->src[e]) - 7.0;
        shifted[e * 2] += c;
        shifted[e * 2 + 1] += c;
    }
    const auto a = ad::segment_softmax(raw, index);
    const auto b = ad::segment_softmax(T64(raw.shape(), shifted), index);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a.values()[i] - b.values()[i]) <= 1e-6);
    }
}

TEST_CASE("light self-attention examples") {
    // u0 — p0 only: node 0 aggregates node 1 with weight 1.
    const BipartiteGraph g(1, 1, {{0, 1}});
    AttentionParams<double> p;
    p.dim = 2;
    p.heads = 1;
    p.query = identity(2);
    p.key = identity(2);
    p.value = identity(2);
    p.output = identity(2);
    const T64 h({2, 2}, {1.0, 2.0, -3.0, 0.5});
    const auto out = light_self_attention(h, g, p);
    CHECK(out.at(0, 0) == doctest::Approx(-3.0));
    CHECK(out.at(0, 1) == doctest::Approx(0.5));
    CHECK(out.at(1, 0) == doctest::Approx(1.0));
    CHECK(out.at(1, 1) == doctest::Approx(2.0));

    auto zero_value = p;
    zero_value.value = constant(2, 2, 0.0);
    const auto silent = light_self_attention(h, g, zero_value);
    for (const auto v : silent.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("light self-attention matches direct aggregation") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto rng = make_rng(seed, "lsa-oracle");
        const auto g = random_graph(3, 4, 0.5, rng);
        const auto p = random_params(4, 2, rng);
        const auto h = random_tensor(g.num_nodes(), 4, rng, 1.0, false);
        const auto alpha = brute_force_alpha(h, g, p);
        const auto out = light_self_attention(h, g, p);
        const auto raw = light_self_attention(h, g, p, false);
        for (std::uint32_t k = 0; k < g.num_nodes(); ++k) {
            std::vector<double> msg(4, 0.0);
            for (const auto& [pair, weights] : alpha) {
                if (pair.first != k) {
                    continue;
                }
                for (std::size_t head = 0; head < 2; ++head) {
                    const auto v = head_projection(p.value, h, pair.second, head, 2);
                    for (std::size_t r = 0; r < 2; ++r) {
                        msg[head * 2 + r] += weights[head] * v[r];
                    }
                }
            }
            for (std::size_t r = 0; r < 4; ++r) {
                double projected = 0.0;
                for (std::size_t c = 0; c < 4; ++c) {
                    projected += p.output.at(r, c) * msg[c];
                }
                CHECK(std::abs(raw.at(k, r) - msg[r]) < 1e-9);
                CHECK(std::abs(out.at(k, r) - projected) < 1e-9);
            }
        }
    }
}

TEST_CASE("residual graph transformer") {
    auto rng = make_rng(7, "residual");
    const auto g = random_graph(4, 5, 0.4, rng);
    const auto h = random_tensor(g.num_nodes(), 4, rng, 1.0, false);
    AttentionParams<double> zero{2, 4, constant(4, 4, 0.0), constant(4, 4, 0.0), constant(4, 4, 0.0),
                                 constant(4, 4, 0.0)};
    const auto same = residual_gt(h, g, zero, 2);
    for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(same.values()[i] == h.values()[i]);
    }

    const auto p = random_params(4, 2, rng);
    const auto one = residual_gt(h, g, p, 1);
    const auto attended = light_self_attention(h, g, p);
    for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(one.values()[i] == doctest::Approx(attended.values()[i] + h.values()[i]));
    }
    const auto deep = residual_gt(h, g, p, 4);
    for (const auto v : deep.values()) {
        CHECK(std::isfinite(v));
    }
    CHECK_THROWS(residual_gt(h, g, p, 0));
}

TEST_CASE("relabelling nodes permutes outputs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto rng = make_rng(seed, "equivariance");
        const auto g = random_graph(4, 6, 0.4, rng);
        const auto p = random_params(4, 2, rng);
        const auto h = random_tensor(10, 4, rng, 1.0, false);
        std::vector<std::uint32_t> perm(10);
        std::iota(perm.begin(), perm.end(), 0u);
        std::shuffle(perm.begin(), perm.begin() + 4, rng);
        std::shuffle(perm.begin() + 4, perm.end(), rng);
        std::vector<Edge> edges;
        for (const auto& e : g.edges()) {
            edges.push_back({perm[e.user_node], perm[e.item_node]});
        }
        std::reverse(edges.begin(), edges.end());
        const BipartiteGraph relabelled(4, 6, edges);
        std::vector<double> moved(h.size());
        for (std::size_t k = 0; k < 10; ++k) {
            for (std::size_t j = 0; j < 4; ++j) {
                moved[perm[k] * 4 + j] = h.at(k, j);
            }
        }
        const auto a = residual_gt(h, g, p, 2);
        const auto b = residual_gt(T64({10, 4}, moved), relabelled, p, 2);
        for (std::size_t k = 0; k < 10; ++k) {
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(std::abs(a.at(k, j) - b.at(perm[k], j)) < 1e-9);
            }
        }
    }
}

TEST_CASE("attention gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = make_rng(seed, "attention-grad");
        const auto g = random_graph(3, 3, 0.5, rng);
        auto p = random_params(4, 2, rng, true);
        auto h = random_tensor(g.num_nodes(), 4, rng);
        const auto probe = random_tensor(g.num_nodes(), 4, rng, 1.0, false);
        const std::vector<T64> leaves{h, p.query, p.key, p.value, p.output};
        CHECK(gradcheck(leaves, [&] { return ad::sum(ad::mul(light_self_attention(h, g, p), probe)); }) <
              kGradTolerance);
        CHECK(gradcheck(leaves, [&] { return ad::sum(ad::mul(residual_gt(h, g, p, 2), probe)); }) < kGradTolerance);
    }
}
