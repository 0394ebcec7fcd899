#include <doctest.h>

#include <map>
#include <set>
#include <sstream>
#include <string>

#include "rgtrec/errors.hpp"
#include "rgtrec/experiments.hpp"
#include "test_support.hpp"

using namespace rgtrec;

namespace {

std::map<std::string, std::string> as_map(const Overrides& o) {
    return {o.begin(), o.end()};
}

InteractionDataset tiny_dataset() {
    BlockDatasetOptions opts;
    opts.users = 16;
    opts.items = 16;
    opts.blocks = 2;
    opts.interactions_per_user = 6;
    return split(make_block_dataset(opts, 2), {}, 2);
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.latdim = 8;
    cfg.head = 2;
    cfg.anchor_set = 4;
    cfg.batch = 64;
    cfg.epochs = 2;
    cfg.patience = 0;
    return cfg;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

}  // namespace

TEST_CASE("component variants switch the expected parts") {
    const auto v = component_variants();
    REQUIRE(v.size() == 3);
    CHECK(v[0].name == "GT");
    CHECK(v[1].name == "RGT+LA");
    CHECK(v[2].name == "AD");
    for (const auto& x : v) {
        CHECK(x.study == "components");
    }

    const TrainConfig base;
    const auto gt = apply_overrides(base, v[0].overrides);
    CHECK_FALSE(gt.use_topology);
    CHECK_FALSE(gt.use_residual);
    CHECK_FALSE(gt.use_output_projection);
    CHECK_FALSE(gt.use_distillation);

    const auto la = apply_overrides(base, v[1].overrides);
    CHECK(la.use_topology);
    CHECK(la.use_residual);
    CHECK(la.use_output_projection);
    CHECK_FALSE(la.use_distillation);

    const auto ad = apply_overrides(base, v[2].overrides);
    CHECK(dump_config(ad) == dump_config(base));
}

TEST_CASE("loss variants each drop one term") {
    const auto v = loss_variants();
    REQUIRE(v.size() == 5);
    const std::vector<std::string> names{"full", "-L_RD", "-L_Rec", "-L_distill", "-reg"};
    TrainConfig base;
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(v[i].name == names[i]);
        CHECK(v[i].study == "losses");
        CHECK(v[i].overrides.size() == (i == 0 ? 0u : 1u));
    }
    CHECK(apply_overrides(base, v[1].overrides).loss_weights().rd == 0.0);
    CHECK(apply_overrides(base, v[2].overrides).loss_weights().rec == 0.0);
    CHECK(apply_overrides(base, v[3].overrides).loss_weights().distill == 0.0);
    CHECK(apply_overrides(base, v[4].overrides).loss_weights().reg == 0.0);
    CHECK(apply_overrides(base, v[4].overrides).loss_weights().rec == 1.0);
}

TEST_CASE("apply_overrides validates the result") {
    TrainConfig base;
    CHECK(apply_overrides(base, {{"lr", "0.5"}, {"latdim", "16"}}).lr == 0.5);
    CHECK_THROWS_AS(apply_overrides(base, {{"no_such_key", "1"}}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(base, {{"latdim", "abc"}}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(base, {{"rho_r", "1.5"}}), ConfigError);
}

TEST_CASE("expand_grid forms the cartesian product") {
    const auto grid = expand_grid({"lr=0.1,0.01", "latdim=8,16,32"});
    REQUIRE(grid.size() == 6);
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& point : grid) {
        const auto m = as_map(point);
        REQUIRE(m.size() == 2);
        seen.emplace(m.at("lr"), m.at("latdim"));
    }
    CHECK(seen.size() == 6);
    CHECK(seen.count({"0.01", "32"}) == 1);

    CHECK(expand_grid({}).size() == 1);
    CHECK(expand_grid({"seed=4"}).size() == 1);
    CHECK_THROWS_AS(expand_grid({"lr"}), ConfigError);
    CHECK_THROWS_AS(expand_grid({"=1,2"}), ConfigError);
    CHECK_THROWS_AS(expand_grid({"lr="}), ConfigError);
    CHECK_THROWS_AS(expand_grid({"bogus=1,2"}), ConfigError);
    CHECK_THROWS_AS(expand_grid({"latdim=8,x"}), ConfigError);
}

TEST_CASE("run_variants trains each distinct configuration once per seed") {
    const auto ds = tiny_dataset();
    auto variants = loss_variants();
    variants.push_back({"losses", "full-again", {}});
    std::vector<RunResult> streamed;
    const auto runs = run_variants(ds, tiny_config(), variants, {1, 2}, 1,
                                   [&](const RunResult& r) { streamed.push_back(r); });
    REQUIRE(runs.size() == 12);
    CHECK(streamed.size() == 12);
    std::map<std::string, int> per_variant;
    for (const auto& r : runs) {
        ++per_variant[r.variant];
        CHECK(r.history.size() == 2);
        CHECK(r.test.recall_at(40) >= 0.0);
        CHECK(r.test.recall_at(40) <= 1.0);
    }
    CHECK(per_variant.size() == 6);
    for (const auto& [name, n] : per_variant) {
        CHECK(n == 2);
    }
    // identical configurations share a run
    CHECK(runs[0].test.recall == runs[5].test.recall);
    CHECK(runs[0].history[0].loss.total == runs[5].history[0].loss.total);
    // different seeds train separately
    CHECK(runs[0].seed == 1);
    CHECK(runs[6].seed == 2);
    CHECK(runs[0].history[0].loss.total != runs[6].history[0].loss.total);

    std::ostringstream table;
    write_ablation_csv(table, runs);
    const auto rows = lines_of(table.str());
    REQUIRE(rows.size() == 13);
    CHECK(rows[0] == "study,variant,seed,recall@40,ndcg@40");
    CHECK(rows[1].rfind("losses,full,1,", 0) == 0);

    std::ostringstream series;
    write_series_csv(series, runs);
    const auto srows = lines_of(series.str());
    REQUIRE(srows.size() == 1 + 12 * 2);
    CHECK(srows[0] == "study,variant,seed,epoch,loss,val_recall@20");
    CHECK(srows[2].rfind("losses,full,1,2,", 0) == 0);
}
