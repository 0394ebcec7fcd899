#include "rgtrec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "rgtrec/errors.hpp"

namespace rgtrec {

namespace {

struct KeySpec {
    std::string name;
    std::function<void(TrainConfig&, std::string_view)> set;
    std::function<std::string(const TrainConfig&)> get;
};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename V>
V parse_value(std::string_view key, std::string_view text) {
    auto fail = [&]() -> ConfigError {
        return ConfigError("invalid value '" + std::string(text) + "' for key '" + std::string(key) + "'");
    };
    if constexpr (std::is_same_v<V, std::string>) {
        return std::string(text);
    } else if constexpr (std::is_same_v<V, bool>) {
        if (text == "true" || text == "1" || text == "yes" || text == "on") {
            return true;
        }
        if (text == "false" || text == "0" || text == "no" || text == "off") {
            return false;
        }
        throw fail();
    } else {
        V value{};
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            throw fail();
        }
        return value;
    }
}

template <typename V>
KeySpec key(std::string name, V TrainConfig::*member) {
    KeySpec spec;
    spec.name = name;
    spec.set = [name, member](TrainConfig& cfg, std::string_view text) {
        cfg.*member = parse_value<V>(name, text);
    };
    spec.get = [member](const TrainConfig& cfg) {
        if constexpr (std::is_same_v<V, bool>) {
            return std::string(cfg.*member ? "true" : "false");
        } else {
            return fmt::format("{}", cfg.*member);
        }
    };
    return spec;
}

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = {
        key("latdim", &TrainConfig::latdim),
        key("head", &TrainConfig::head),
        key("gcn", &TrainConfig::gcn),
        key("gt", &TrainConfig::gt),
        key("pnn", &TrainConfig::pnn),
        key("anchor_set", &TrainConfig::anchor_set),
        key("hop_cutoff", &TrainConfig::hop_cutoff),
        key("layer_combination", &TrainConfig::layer_combination),
        key("model", &TrainConfig::model),
        key("batch", &TrainConfig::batch),
        key("lr", &TrainConfig::lr),
        key("epochs", &TrainConfig::epochs),
        key("patience", &TrainConfig::patience),
        key("eval_every", &TrainConfig::eval_every),
        key("reg", &TrainConfig::reg),
        key("ctra", &TrainConfig::ctra),
        key("lambda_rd", &TrainConfig::lambda_rd),
        key("lambda_rec", &TrainConfig::lambda_rec),
        key("lambda_mae", &TrainConfig::lambda_mae),
        key("lambda_distill", &TrainConfig::lambda_distill),
        key("tau", &TrainConfig::tau),
        key("mae_negatives", &TrainConfig::mae_negatives),
        key("mae_literal", &TrainConfig::mae_literal),
        key("rec_candidates", &TrainConfig::rec_candidates),
        key("ssl_reg", &TrainConfig::ssl_reg),
        key("b2", &TrainConfig::b2),
        key("gtw", &TrainConfig::gtw),
        key("rho_r", &TrainConfig::rho_r),
        key("rho_m", &TrainConfig::rho_m),
        key("rho_c", &TrainConfig::rho_c),
        key("use_distillation", &TrainConfig::use_distillation),
        key("distill_mode", &TrainConfig::distill_mode),
        key("ema_decay", &TrainConfig::ema_decay),
        key("use_topology", &TrainConfig::use_topology),
        key("use_residual", &TrainConfig::use_residual),
        key("use_output_projection", &TrainConfig::use_output_projection),
        key("seed", &TrainConfig::seed),
        key("deterministic", &TrainConfig::deterministic),
        key("precision", &TrainConfig::precision),
    };
    return table;
}

const KeySpec& find_key(std::string_view key) {
    for (const auto& spec : key_table()) {
        if (spec.name == key) {
            return spec;
        }
    }
    std::string message = "unknown config key '" + std::string(key) + "'; valid keys:";
    for (const auto& spec : key_table()) {
        message += " " + spec.name;
    }
    throw ConfigError(message);
}

void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ConfigError(message);
    }
}

}  // namespace

void TrainConfig::validate() const {
    require(latdim > 0, "latdim must be positive");
    require(head > 0, "head must be positive");
    require(latdim % head == 0, "latdim must be divisible by head");
    require(gcn > 0, "gcn must be positive");
    require(gt > 0, "gt must be positive");
    require(pnn > 0, "pnn must be positive");
    require(anchor_set > 0, "anchor_set must be positive");
    require(hop_cutoff > 0, "hop_cutoff must be positive");
    require(layer_combination == "mean" || layer_combination == "last", "layer_combination must be mean or last");
    require(model == "rgt" || model == "bprmf", "model must be rgt or bprmf");
    require(batch > 0, "batch must be positive");
    require(lr > 0.0, "lr must be positive");
    require(epochs > 0, "epochs must be positive");
    require(eval_every > 0, "eval_every must be positive");
    for (const auto& [name, rate] : {std::pair{"rho_r", rho_r}, {"rho_m", rho_m}, {"rho_c", rho_c}}) {
        require(rate > 0.0 && rate <= 1.0, std::string(name) + " must lie in (0, 1]");
    }
    require(rho_m > rho_r, "rho_m must exceed rho_r");
    require(rho_c <= rho_m / 4.0, "rho_c must not exceed rho_m / 4");
    require(distill_mode == "student" || distill_mode == "ema", "distill_mode must be student or ema");
    require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must lie in [0, 1)");
    require(precision == 32 || precision == 64, "precision must be 32 or 64");
    loss_weights().validate();
}

LossWeights TrainConfig::loss_weights() const {
    LossWeights w;
    w.rec = lambda_rec;
    w.rd = lambda_rd;
    w.cir = ctra;
    w.reg = reg;
    w.distill = use_distillation ? lambda_distill : 0.0;
    w.mae = lambda_mae;
    w.tau = tau;
    return w;
}

PropagationConfig TrainConfig::propagation() const {
    return PropagationConfig{gcn, layer_combination == "last" ? LayerCombination::last_layer
                                                              : LayerCombination::mean_of_layers};
}

EncoderFlags TrainConfig::encoder_flags() const {
    return EncoderFlags{use_topology, use_residual, use_output_projection};
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& spec : key_table()) {
        keys.push_back(spec.name);
    }
    return keys;
}

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
    find_key(key).set(cfg, trim(value));
}

std::string get_config_value(const TrainConfig& cfg, std::string_view key) { return find_key(key).get(cfg); }

TrainConfig parse_config(std::istream& in, TrainConfig base) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const auto content = trim(std::string_view(line).substr(0, hash));
        if (content.empty()) {
            continue;
        }
        const auto eq = content.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        set_config_value(base, trim(content.substr(0, eq)), trim(content.substr(eq + 1)));
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    return parse_config(in, std::move(base));
}

std::string dump_config(const TrainConfig& cfg) {
    std::ostringstream out;
    for (const auto& spec : key_table()) {
        out << spec.name << " = " << spec.get(cfg) << '\n';
    }
    return out.str();
}

}  // namespace rgtrec
