#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "rgtrec/errors.hpp"
#include "rgtrec/trainer.hpp"
#include "test_support.hpp"

using namespace rgtrec;
using namespace rgtrec::testing;

namespace {

// 10 users, 10 items, two blocks.
InteractionDataset small_dataset(std::uint64_t seed = 3) {
    BlockDatasetOptions opts;
    opts.users = 10;
    opts.items = 10;
    opts.blocks = 2;
    opts.interactions_per_user = 4;
    opts.within_block = 0.9;
    return split(make_block_dataset(opts, seed), {}, seed);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.latdim = 8;
    cfg.head = 2;
    cfg.anchor_set = 4;
    cfg.batch = 16;
    cfg.lr = 0.01;
    cfg.epochs = 5;
    cfg.patience = 0;
    return cfg;
}

template <typename T>
std::vector<std::vector<T>> values_of(const ad::ParameterSet<T>& set) {
    std::vector<std::vector<T>> out;
    for (const auto& p : set.entries()) {
        out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
    return out;
}

bool same_bits(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) {
        n += !line.empty();
    }
    return n;
}

// Large enough that every run has validation interactions.
InteractionDataset medium_dataset() {
    BlockDatasetOptions opts;
    opts.users = 30;
    opts.items = 30;
    opts.blocks = 3;
    opts.interactions_per_user = 12;
    return split(make_block_dataset(opts, 8), {}, 8);
}

}  // namespace

TEST_CASE("negative_sample forces the only unowned item") {
    std::vector<std::vector<std::uint32_t>> train{{0}};
    const std::vector<std::uint32_t> users{0};
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto t = negative_sample(train, 2, users, rng);
        REQUIRE(t.size() == 1);
        CHECK(t[0].user == 0);
        CHECK(t[0].positive == 0);
        CHECK(t[0].negative == 1);
    }
}

TEST_CASE("negative_sample positives are uniform and negatives never owned") {
    std::vector<std::vector<std::uint32_t>> train{{1, 3, 4, 8, 9}, {0, 2}};
    const std::vector<std::uint32_t> users{0, 1};
    Rng rng(11);
    std::map<std::uint32_t, int> positives;
    std::map<std::uint32_t, int> negatives;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        for (const auto& t : negative_sample(train, 12, users, rng)) {
            const auto& owned = train[t.user];
            CHECK(std::binary_search(owned.begin(), owned.end(), t.positive));
            CHECK_FALSE(std::binary_search(owned.begin(), owned.end(), t.negative));
            CHECK(t.negative < 12);
            if (t.user == 0) {
                ++positives[t.positive];
                ++negatives[t.negative];
            }
        }
    }
    auto chi2 = [&](const std::map<std::uint32_t, int>& counts, std::size_t cells) {
        const double expected = static_cast<double>(draws) / static_cast<double>(cells);
        double s = 0.0;
        CHECK(counts.size() == cells);
        for (const auto& [k, c] : counts) {
            s += (c - expected) * (c - expected) / expected;
        }
        return s;
    };
    // 99.9% quantiles for 4 and 6 degrees of freedom
    CHECK(chi2(positives, 5) < 18.47);
    CHECK(chi2(negatives, 7) < 22.46);
}

TEST_CASE("negative_sample skips users with no positives or every item") {
    std::vector<std::vector<std::uint32_t>> train{{}, {0, 1, 2}, {1}};
    const std::vector<std::uint32_t> users{0, 1, 2};
    Rng rng(1);
    const auto t = negative_sample(train, 3, users, rng);
    REQUIRE(t.size() == 1);
    CHECK(t[0].user == 2);
}

TEST_CASE("negative_sample over a dataset never returns a train pair") {
    const auto ds = small_dataset();
    const auto train = ds.items_by_user(Split::train);
    std::vector<std::uint32_t> users(ds.num_users);
    std::iota(users.begin(), users.end(), 0u);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        for (const auto& t : negative_sample(ds, users, seed)) {
            CHECK(std::binary_search(train[t.user].begin(), train[t.user].end(), t.positive));
            CHECK_FALSE(std::binary_search(train[t.user].begin(), train[t.user].end(), t.negative));
        }
    }
}

TEST_CASE("recommendation loss alone decreases") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.precision = 64;
    cfg.lambda_rd = 0;
    cfg.lambda_mae = 0;
    cfg.ctra = 0;
    cfg.reg = 0;
    cfg.use_distillation = false;
    Trainer<double> trainer(ds, cfg);
    std::vector<double> losses;
    for (int e = 0; e < 5; ++e) {
        const auto r = trainer.train_epoch();
        CHECK(r.loss.mae == 0.0);
        CHECK(r.loss.cir == 0.0);
        CHECK(r.loss.rd == 0.0);
        CHECK(r.loss.total == doctest::Approx(r.loss.rec));
        losses.push_back(r.loss.rec);
    }
    CHECK(losses.back() < losses.front());
}

TEST_CASE("epochs report normalised rationale probabilities") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.precision = 64;
    Trainer<double> trainer(ds, cfg);
    for (int e = 0; e < 4; ++e) {
        const auto r = trainer.train_epoch();
        CHECK(r.epoch == static_cast<std::size_t>(e + 1));
        CHECK(r.steps >= 1);
        CHECK(std::abs(r.prob_sum - 1.0) <= 1e-6);
        CHECK(std::isfinite(r.loss.total));
    }
}

TEST_CASE("identical seeds give identical epoch losses") {
    const auto ds = small_dataset();
    const auto cfg = small_config();
    Trainer<float> a(ds, cfg);
    Trainer<float> b(ds, cfg);
    for (int e = 0; e < 3; ++e) {
        const auto ra = a.train_epoch();
        const auto rb = b.train_epoch();
        CHECK(ra.loss.total == rb.loss.total);
        CHECK(ra.loss.rec == rb.loss.rec);
        CHECK(ra.loss.distill == rb.loss.distill);
    }
    CHECK(same_bits(a.prediction(), b.prediction()));

    auto other = cfg;
    other.seed = 2;
    Trainer<float> c(ds, other);
    CHECK(c.train_epoch().loss.total != Trainer<float>(ds, cfg).train_epoch().loss.total);
}

TEST_CASE("checkpoint round trip restores predictions and later training") {
    const auto ds = small_dataset();
    const auto dir = temp_dir("trainer_ckpt");
    for (const std::string mode : {"student", "ema"}) {
        CAPTURE(mode);
        auto cfg = small_config();
        cfg.distill_mode = mode;
        Trainer<float> a(ds, cfg);
        a.train_epoch();
        a.train_epoch();
        const auto path = dir / (mode + ".ckpt");
        a.save_checkpoint(path);

        Trainer<float> b(ds, cfg);
        b.train_epoch();  // state that the load must overwrite
        b.train_epoch();
        b.train_epoch();
        b.load_checkpoint(path);
        CHECK(b.epoch() == 2);
        CHECK(same_bits(a.prediction(), b.prediction()));

        Trainer<float> c(ds, cfg);
        c.load_checkpoint(path);
        const auto ra = a.train_epoch();
        const auto rc = c.train_epoch();
        CHECK(ra.loss.total == rc.loss.total);
        CHECK(same_bits(a.prediction(), c.prediction()));
    }
}

TEST_CASE("checkpoint from another dataset size is rejected") {
    const auto ds = small_dataset();
    const auto dir = temp_dir("trainer_mismatch");
    const auto cfg = small_config();
    Trainer<float> a(ds, cfg);
    a.save_checkpoint(dir / "a.ckpt");
    auto wider = cfg;
    wider.latdim = 16;
    Trainer<float> b(ds, wider);
    CHECK_THROWS_AS(b.load_checkpoint(dir / "a.ckpt"), DataError);
}

TEST_CASE("distillation leaves the teacher untouched") {
    const auto ds = small_dataset();
    auto with = small_config();
    with.precision = 64;
    with.lambda_distill = 1.0;
    auto without = with;
    without.use_distillation = false;

    Trainer<double> a(ds, with);
    Trainer<double> b(ds, without);
    REQUIRE(a.student() != nullptr);
    CHECK(b.student() == nullptr);
    const auto student_start = values_of(a.student()->set);
    for (int e = 0; e < 3; ++e) {
        const auto ra = a.train_epoch();
        const auto rb = b.train_epoch();
        CHECK(ra.loss.distill > 0.0);
        CHECK(rb.loss.distill == 0.0);
    }
    // The teacher sees the same data and the same loss terms apart from the
    // distillation term, which must not reach it.
    const auto ta = values_of(a.teacher().set);
    const auto tb = values_of(b.teacher().set);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i] == tb[i]);
    }
    CHECK(same_bits(a.prediction(), b.prediction()));
    CHECK(values_of(a.student()->set) != student_start);
}

TEST_CASE("ema mode moves the shadow copy toward the model") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.precision = 64;
    cfg.distill_mode = "ema";
    Trainer<double> t(ds, cfg);
    REQUIRE(t.ema() != nullptr);
    CHECK(t.student() == nullptr);
    CHECK(values_of(t.ema()->set) == values_of(t.teacher().set));
    const auto start = values_of(t.ema()->set);
    const auto r = t.train_epoch();
    CHECK(std::isfinite(r.loss.total));
    CHECK(r.loss.distill >= 0.0);
    CHECK(values_of(t.ema()->set) != start);
    CHECK(values_of(t.ema()->set) != values_of(t.teacher().set));
}

TEST_CASE("fit runs every epoch without patience and writes its outputs") {
    const auto ds = medium_dataset();
    REQUIRE(ds.count(Split::val) > 0);
    auto cfg = small_config();
    cfg.epochs = 4;
    const auto dir = temp_dir("trainer_fit");
    FitOptions options;
    options.out_dir = dir;
    std::size_t callbacks = 0;
    options.on_epoch = [&](const EpochRecord&) { ++callbacks; };
    const auto result = fit(ds, cfg, options);
    CHECK(result.epochs_run == 4);
    CHECK(result.history.size() == 4);
    CHECK(callbacks == 4);
    CHECK(std::filesystem::exists(dir / "model.ckpt"));
    CHECK(std::filesystem::exists(dir / "config.cfg"));
    CHECK(count_lines(dir / "train_log.jsonl") == 4);
    CHECK(load_config(dir / "config.cfg").latdim == 8);

    std::ifstream log(dir / "train_log.jsonl");
    std::string line;
    std::getline(log, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == 1);
    CHECK(j.at("loss").contains("total"));
    CHECK(j.contains("val_recall@20"));

    // the best epoch is the first maximum of validation recall
    std::size_t best = 0;
    double best_value = -1.0;
    for (const auto& r : result.history) {
        REQUIRE(r.val_recall20.has_value());
        if (*r.val_recall20 > best_value) {
            best_value = *r.val_recall20;
            best = r.epoch;
        }
    }
    CHECK(result.best_epoch == best);
    CHECK(result.best_val_recall20 == best_value);

    // the saved checkpoint holds the best parameters
    Trainer<float> reloaded(ds, cfg);
    reloaded.load_checkpoint(dir / "model.ckpt");
    CHECK(same_bits(reloaded.prediction(), result.embeddings));
    CHECK(evaluate(result.embeddings, ds, Split::val, 1, {20}).recall_at(20) == doctest::Approx(best_value));
}

TEST_CASE("early stopping halts once patience runs out") {
    const auto ds = medium_dataset();
    auto cfg = small_config();
    cfg.epochs = 30;
    cfg.patience = 2;
    const auto result = fit(ds, cfg);
    CHECK(result.epochs_run <= cfg.epochs);
    if (result.epochs_run < cfg.epochs) {
        CHECK(result.epochs_run == result.best_epoch + cfg.patience);
    }
}

TEST_CASE("an empty validation split disables early stopping") {
    auto ds = small_dataset();
    for (auto& a : ds.assignment) {
        if (a == Split::val) {
            a = Split::train;
        }
    }
    auto cfg = small_config();
    cfg.epochs = 3;
    cfg.patience = 1;
    const auto result = fit(ds, cfg);
    CHECK(result.epochs_run == 3);
    CHECK(result.best_epoch == 3);
    for (const auto& r : result.history) {
        CHECK_FALSE(r.val_recall20.has_value());
    }
}

TEST_CASE("a diverging run stops with a numeric error and a dump") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.lr = 1e30;
    cfg.epochs = 20;
    const auto dir = temp_dir("trainer_nan");
    FitOptions options;
    options.out_dir = dir;
    CHECK_THROWS_AS(fit(ds, cfg, options), ad::NumericError);
    CHECK(std::filesystem::exists(dir / "nonfinite.ckpt"));
}

TEST_CASE("fit writes sampled subgraphs when asked") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.epochs = 2;
    const auto dir = temp_dir("trainer_dump");
    FitOptions options;
    options.dump_dir = dir;
    fit(ds, cfg, options);
    std::set<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        names.insert(entry.path().filename().string());
    }
    CHECK(names.size() == 6);
    CHECK(names.count("epoch0001_rationale.tsv") == 1);
    CHECK(names.count("epoch0002_complement.tsv") == 1);
}

TEST_CASE("training needs a split dataset with train pairs") {
    auto ds = make_dataset(3, 3, {{0, 0}, {1, 1}});
    CHECK_THROWS_AS(Trainer<float>(ds, small_config()), DataError);
}

TEST_CASE("pairwise factorisation baseline learns the block structure") {
    BlockDatasetOptions opts;
    opts.users = 60;
    opts.items = 60;
    opts.blocks = 3;
    opts.interactions_per_user = 10;
    const auto ds = split(make_block_dataset(opts, 4), {}, 4);
    TrainConfig cfg;
    cfg.model = "bprmf";
    cfg.latdim = 8;
    cfg.lr = 0.05;
    cfg.reg = 1e-4;
    auto learner = make_learner(ds, cfg);
    const double before = evaluate(learner->prediction(), ds, Split::test).recall_at(20);
    double first = 0.0, last = 0.0;
    for (int e = 0; e < 60; ++e) {
        const auto r = learner->train_epoch();
        (e == 0 ? first : last) = r.loss.total;
    }
    CHECK(last < first);
    const double after = evaluate(learner->prediction(), ds, Split::test).recall_at(20);
    CHECK(after > before + 0.1);

    const auto dir = temp_dir("bprmf");
    learner->save_checkpoint(dir / "m.ckpt");
    auto other = make_learner(ds, cfg);
    other->load_checkpoint(dir / "m.ckpt");
    CHECK(same_bits(other->prediction(), learner->prediction()));
    CHECK(other->epoch() == 60);
}

TEST_CASE("make_learner picks the precision") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.precision = 64;
    CHECK(dynamic_cast<Trainer<double>*>(make_learner(ds, cfg).get()) != nullptr);
    cfg.precision = 32;
    CHECK(dynamic_cast<Trainer<float>*>(make_learner(ds, cfg).get()) != nullptr);
}
