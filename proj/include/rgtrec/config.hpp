#pragma once

// Flat `key = value` training configuration. Keys are the field names below.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rgtrec/objectives.hpp"
#include "rgtrec/propagation.hpp"

namespace rgtrec {

struct TrainConfig {
    // architecture
    std::size_t latdim = 64;
    std::size_t head = 8;
    std::size_t gcn = 1;
    std::size_t gt = 1;
    std::size_t pnn = 2;
    std::size_t anchor_set = 32;
    std::size_t hop_cutoff = 2;
    std::string layer_combination = "mean";  // mean | last
    std::string model = "rgt";               // rgt | bprmf

    // optimisation
    std::size_t batch = 4096;
    double lr = 1e-3;
    std::size_t epochs = 200;
    std::size_t patience = 20;  // 0 disables early stopping
    std::size_t eval_every = 1;

    // loss weights
    double reg = 1e-4;
    double ctra = 0.005;
    double lambda_rd = 1.0;
    double lambda_rec = 1.0;
    double lambda_mae = 1.0;
    double lambda_distill = 0.1;
    double tau = 0.5;
    std::size_t mae_negatives = 1;
    bool mae_literal = false;
    std::size_t rec_candidates = 0;  // 0 = every item

    // kept for parity with published hyperparameter tables; unused
    double ssl_reg = 0.5;
    double b2 = 1.0;
    double gtw = 0.1;

    // subgraph sampling rates
    double rho_r = 0.5;
    double rho_m = 0.9;
    double rho_c = 0.1;

    // distillation
    bool use_distillation = true;
    std::string distill_mode = "student";  // student | ema
    double ema_decay = 0.99;

    // component switches
    bool use_topology = true;
    bool use_residual = true;
    bool use_output_projection = true;

    std::uint64_t seed = 1;
    bool deterministic = true;
    std::size_t precision = 32;  // 32 | 64

    void validate() const;
    LossWeights loss_weights() const;
    PropagationConfig propagation() const;
    EncoderFlags encoder_flags() const;
};

std::vector<std::string> config_keys();

// Throws ConfigError for unknown keys (listing the valid ones) or values that
// do not parse.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const TrainConfig& cfg, std::string_view key);

// Lines are `key = value`; blank lines and `#` comments are ignored. Values
// are applied on top of `base`.
TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// Every key, one per line, in `config_keys()` order.
std::string dump_config(const TrainConfig& cfg);

}  // namespace rgtrec
