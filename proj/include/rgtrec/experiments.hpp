#pragma once

// Multi-run drivers behind the `ablate` and `grid` commands.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rgtrec/config.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/trainer.hpp"

namespace rgtrec {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct Variant {
    std::string study;  // "components" or "losses"
    std::string name;
    Overrides overrides;
};

// GT, RGT+LA, AD
std::vector<Variant> component_variants();
// full, -L_RD, -L_Rec, -L_distill, -reg
std::vector<Variant> loss_variants();

TrainConfig apply_overrides(TrainConfig cfg, const Overrides& overrides);

struct RunResult {
    std::string study;
    std::string variant;
    std::uint64_t seed = 0;
    RankingResult test;
    std::vector<EpochRecord> history;
};

// Trains every variant once per seed. Variants whose resolved configuration
// is identical share one training run.
std::vector<RunResult> run_variants(const InteractionDataset& ds, const TrainConfig& base,
                                    const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                                    std::size_t threads = 1,
                                    const std::function<void(const RunResult&)>& on_run = {});

// study,variant,seed,recall@40,ndcg@40
void write_ablation_csv(std::ostream& out, const std::vector<RunResult>& runs);
// study,variant,seed,epoch,loss,val_recall@20
void write_series_csv(std::ostream& out, const std::vector<RunResult>& runs);

// Cartesian product of `key=v1,v2,...` axes.
std::vector<Overrides> expand_grid(const std::vector<std::string>& axes);

}  // namespace rgtrec
