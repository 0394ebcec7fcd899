#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgtrec/checkpoint.hpp"
#include "rgtrec/config.hpp"
#include "rgtrec/evaluator.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/model.hpp"
#include "rgtrec/objectives.hpp"
#include "rgtrec/rng.hpp"

namespace rgtrec {

// One (u, p⁺, p⁻) per user: p⁺ uniform over the user's train items, p⁻
// uniform over the rest by rejection. Users with no train items or with every
// item are skipped with a warning. `train_items` rows must be sorted.
std::vector<Triple> negative_sample(const std::vector<std::vector<std::uint32_t>>& train_items,
                                    std::size_t num_items, std::span<const std::uint32_t> users, Rng& rng);
std::vector<Triple> negative_sample(const InteractionDataset& ds, std::span<const std::uint32_t> users,
                                    std::uint64_t seed);

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    LossReport loss;  // averaged over the epoch's steps
    double prob_sum = 0.0;
    std::optional<double> val_recall20;
    std::optional<double> val_ndcg20;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

// Anything `fit` can drive.
class Learner {
public:
    virtual ~Learner() = default;
    virtual EpochRecord train_epoch() = 0;
    virtual DenseMatrix prediction() const = 0;
    virtual std::size_t epoch() const = 0;
    virtual void snapshot() = 0;  // remember the current parameters
    virtual void restore() = 0;   // return to the last snapshot
    virtual void save_checkpoint(const std::filesystem::path& path) const = 0;
    virtual void load_checkpoint(const std::filesystem::path& path) = 0;
    // Sampled subgraphs are written here every epoch when set.
    virtual void set_dump_dir(const std::filesystem::path&) {}
};

template <typename T>
class Trainer final : public Learner {
public:
    Trainer(const InteractionDataset& ds, TrainConfig cfg, std::size_t threads = 1);

    EpochRecord train_epoch() override;
    DenseMatrix prediction() const override { return to_dense(predict()); }
    std::size_t epoch() const override { return epoch_; }
    void snapshot() override;
    void restore() override;
    void save_checkpoint(const std::filesystem::path& path) const override;
    void load_checkpoint(const std::filesystem::path& path) override;
    void set_dump_dir(const std::filesystem::path& dir) override { dump_dir_ = dir; }

    ad::Tensor<T> predict() const { return model_.predict(teacher_); }

    const TrainConfig& config() const { return cfg_; }
    const GraphContext& context() const { return *context_; }
    const RgtModel<T>& model() const { return model_; }
    ModelParams<T>& teacher() { return teacher_; }
    ModelParams<T>* student() { return has_student_ ? &student_ : nullptr; }
    ModelParams<T>* ema() { return has_ema_ ? &ema_ : nullptr; }

private:
    EmbeddingBundle<T> bundle(const ad::Tensor<T>& s, const ad::Tensor<T>& e_r, const ad::Tensor<T>& e_c) const;
    std::vector<std::uint32_t> rec_candidates(std::span<const Interaction> batch, Rng& rng) const;

    const InteractionDataset* ds_;
    TrainConfig cfg_;
    std::size_t threads_;
    std::unique_ptr<GraphContext> context_;
    RgtModel<T> model_;
    ModelParams<T> teacher_;
    ModelParams<T> student_;
    ModelParams<T> ema_;
    bool has_student_ = false;
    bool has_ema_ = false;
    std::vector<Interaction> train_pairs_;
    std::vector<std::uint32_t> user_rows_, item_rows_;
    std::vector<std::vector<T>> snapshot_;
    std::filesystem::path dump_dir_;
    std::size_t epoch_ = 0;
};

// Plain matrix factorisation with the pairwise ranking loss, trained by SGD.
class BprMf final : public Learner {
public:
    BprMf(const InteractionDataset& ds, TrainConfig cfg);

    EpochRecord train_epoch() override;
    DenseMatrix prediction() const override;
    std::size_t epoch() const override { return epoch_; }
    void snapshot() override;
    void restore() override;
    void save_checkpoint(const std::filesystem::path& path) const override;
    void load_checkpoint(const std::filesystem::path& path) override;

private:
    const InteractionDataset* ds_;
    TrainConfig cfg_;
    std::vector<std::vector<std::uint32_t>> train_items_;
    std::vector<Interaction> train_pairs_;
    std::vector<double> user_, item_;
    std::vector<double> saved_user_, saved_item_;
    std::size_t epoch_ = 0;
};

std::unique_ptr<Learner> make_learner(const InteractionDataset& ds, const TrainConfig& cfg, std::size_t threads = 1);

struct FitOptions {
    std::filesystem::path out_dir;  // empty: nothing is written
    std::size_t threads = 1;        // ignored in deterministic mode
    std::filesystem::path dump_dir;  // per-epoch subgraph TSVs
    std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_recall20 = 0.0;
    DenseMatrix embeddings;  // prediction table of the best parameters
};

// Trains until the epoch limit or until validation Recall@20 has not improved
// for `patience` epochs. With an output directory it writes model.ckpt,
// train_log.jsonl and config.cfg; a non-finite loss dumps nonfinite.ckpt
// before rethrowing.
FitResult fit(const InteractionDataset& ds, const TrainConfig& cfg, const FitOptions& options = {});

}  // namespace rgtrec
