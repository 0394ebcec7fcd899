#include <doctest.h>

#include <fstream>
#include <sstream>

#include "rgtrec/config.hpp"
#include "rgtrec/errors.hpp"
#include "test_support.hpp"

using namespace rgtrec;

namespace {

TrainConfig parse(const std::string& text, TrainConfig base = {}) {
    std::istringstream in(text);
    return parse_config(in, std::move(base));
}

const std::filesystem::path kConfigDir = RGTREC_CONFIG_DIR;

}  // namespace

TEST_CASE("defaults") {
    const TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.latdim == 64);
    CHECK(cfg.head == 8);
    CHECK(cfg.batch == 4096);
    CHECK(cfg.lr == 1e-3);
    CHECK(cfg.patience == 20);
    CHECK(cfg.rho_r == 0.5);
    CHECK(cfg.rho_m == 0.9);
    CHECK(cfg.rho_c == 0.1);
    CHECK(cfg.lambda_distill == 0.1);
    CHECK(cfg.tau == 0.5);
    CHECK(cfg.hop_cutoff == 2);
    CHECK(cfg.precision == 32);

    const auto w = cfg.loss_weights();
    CHECK(w.rd == 1.0);
    CHECK(w.cir == cfg.ctra);
    CHECK(w.reg == cfg.reg);
    CHECK(w.mae == 1.0);
    CHECK(w.distill == 0.1);
    auto off = cfg;
    off.use_distillation = false;
    CHECK(off.loss_weights().distill == 0.0);
    CHECK(cfg.propagation().layers == cfg.gcn);
    CHECK(cfg.propagation().combination == LayerCombination::mean_of_layers);
}

TEST_CASE("parse key = value with comments") {
    const auto cfg = parse("# comment\n\nlatdim = 32\nhead=4\n  lr = 0.01  # trailing\nuse_topology = off\n");
    CHECK(cfg.latdim == 32);
    CHECK(cfg.head == 4);
    CHECK(cfg.lr == 0.01);
    CHECK_FALSE(cfg.use_topology);
    CHECK_FALSE(cfg.encoder_flags().topology);
}

TEST_CASE("unknown keys list every valid key") {
    try {
        (void)parse("latdimm = 3\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("latdimm") != std::string::npos);
        for (const auto& key : config_keys()) {
            CHECK(msg.find(key) != std::string::npos);
        }
    }
    CHECK_THROWS_AS(parse("latdim = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse("latdim\n"), ConfigError);
    CHECK_THROWS_AS(parse("use_topology = maybe\n"), ConfigError);
}

TEST_CASE("validation") {
    auto bad = [](auto mutate) {
        TrainConfig cfg;
        mutate(cfg);
        return cfg;
    };
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.head = 3; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.rho_m = 0.4; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.rho_c = 0.3; }).validate(), ConfigError);
    CHECK_NOTHROW(bad([](TrainConfig& c) { c.rho_c = c.rho_m / 4.0; }).validate());
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.tau = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.precision = 16; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.reg = -1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.distill_mode = "mirror"; }).validate(), ConfigError);
}

TEST_CASE("dump and reparse round trip") {
    TrainConfig cfg;
    cfg.latdim = 48;
    cfg.head = 6;
    cfg.lr = 0.0123456789;
    cfg.reg = 1e-5;
    cfg.use_residual = false;
    cfg.distill_mode = "ema";
    cfg.seed = 987654321;
    const auto text = dump_config(cfg);
    const auto back = parse(text);
    CHECK(dump_config(back) == text);
    CHECK(back.lr == cfg.lr);
    CHECK(back.seed == cfg.seed);
    CHECK_FALSE(back.use_residual);
    std::size_t lines = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        ++lines;
    }
    CHECK(lines == config_keys().size());
    for (const auto& key : config_keys()) {
        CHECK(get_config_value(back, key) == get_config_value(cfg, key));
    }
}

TEST_CASE("shipped configs carry the published hyperparameters") {
    const auto lastfm = load_config(kConfigDir / "lastfm.cfg");
    CHECK(lastfm.anchor_set == 32);
    CHECK(lastfm.reg == 1e-4);
    CHECK(lastfm.lr == 1e-3);
    CHECK(lastfm.ssl_reg == 0.5);
    CHECK(lastfm.gcn == 1);
    CHECK(lastfm.b2 == 1.0);
    CHECK(lastfm.pnn == 2);
    CHECK(lastfm.batch == 4096);
    CHECK(lastfm.ctra == 0.005);
    CHECK(lastfm.gt == 1);
    CHECK(lastfm.gtw == 0.1);
    CHECK(lastfm.head == 8);
    CHECK(lastfm.latdim == 64);

    const auto yelp = load_config(kConfigDir / "yelp.cfg");
    CHECK(yelp.anchor_set == 16);
    CHECK(yelp.gcn == 3);
    CHECK(yelp.pnn == 2);
    CHECK(yelp.gt == 2);
    CHECK(yelp.head == 2);
    CHECK(yelp.b2 == 0.5);
    CHECK(yelp.gtw == 0.05);

    const auto ifashion = load_config(kConfigDir / "ifashion.cfg");
    CHECK(ifashion.anchor_set == 64);
    CHECK(ifashion.reg == 1e-5);
    CHECK(ifashion.ssl_reg == 1.5);
    CHECK(ifashion.pnn == 1);
    CHECK(ifashion.ctra == 0.0005);
    CHECK(ifashion.latdim == 32);

    for (const char* name : {"lastfm.cfg", "yelp.cfg", "ifashion.cfg", "synthetic.cfg"}) {
        CHECK_NOTHROW(load_config(kConfigDir / name).validate());
    }
    CHECK_THROWS_AS(load_config(kConfigDir / "missing.cfg"), ConfigError);
}
