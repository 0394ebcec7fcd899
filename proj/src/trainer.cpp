#include "rgtrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "rgtrec/errors.hpp"
#include "rgtrec/sampler.hpp"

namespace rgtrec {

namespace {

// Uniform item outside `owned` (sorted). Requires owned.size() < num_items.
std::uint32_t draw_unowned(const std::vector<std::uint32_t>& owned, std::size_t num_items, Rng& rng) {
    std::uniform_int_distribution<std::uint32_t> item(0, static_cast<std::uint32_t>(num_items - 1));
    while (true) {
        const auto candidate = item(rng);
        if (!std::binary_search(owned.begin(), owned.end(), candidate)) {
            return candidate;
        }
    }
}

}  // namespace

std::vector<Triple> negative_sample(const std::vector<std::vector<std::uint32_t>>& train_items,
                                    std::size_t num_items, std::span<const std::uint32_t> users, Rng& rng) {
    std::vector<Triple> triples;
    triples.reserve(users.size());
    for (const auto u : users) {
        const auto& owned = train_items.at(u);
        if (owned.empty()) {
            spdlog::warn("negative_sample: user {} has no train positives, skipped", u);
            continue;
        }
        if (owned.size() >= num_items) {
            spdlog::warn("negative_sample: user {} interacted with every item, skipped", u);
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, owned.size() - 1);
        Triple t;
        t.user = u;
        t.positive = owned[pick(rng)];
        t.negative = draw_unowned(owned, num_items, rng);
        triples.push_back(t);
    }
    return triples;
}

std::vector<Triple> negative_sample(const InteractionDataset& ds, std::span<const std::uint32_t> users,
                                    std::uint64_t seed) {
    auto rng = make_rng(seed, "negatives");
    return negative_sample(ds.items_by_user(Split::train), ds.num_items, users, rng);
}

nlohmann::json EpochRecord::to_json() const {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["steps"] = steps;
    j["loss"] = loss.to_json();
    j["prob_sum"] = prob_sum;
    j["val_recall@20"] = val_recall20 ? nlohmann::json(*val_recall20) : nlohmann::json(nullptr);
    j["val_ndcg@20"] = val_ndcg20 ? nlohmann::json(*val_ndcg20) : nlohmann::json(nullptr);
    j["seconds"] = seconds;
    return j;
}

namespace {

std::vector<Interaction> train_pairs_of(const InteractionDataset& ds) {
    if (!ds.is_split()) {
        throw DataError("training needs a split dataset");
    }
    std::vector<Interaction> pairs;
    for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
        if (ds.assignment[i] == Split::train) {
            pairs.push_back(ds.interactions[i]);
        }
    }
    if (pairs.empty()) {
        throw DataError("training split is empty");
    }
    return pairs;
}

void add_into(LossReport& sum, const LossReport& r) {
    sum.rec += r.rec;
    sum.mae += r.mae;
    sum.distill += r.distill;
    sum.rd += r.rd;
    sum.cir += r.cir;
    sum.reg += r.reg;
    sum.total += r.total;
}

void divide(LossReport& r, double n) {
    for (double* v : {&r.rec, &r.mae, &r.distill, &r.rd, &r.cir, &r.reg, &r.total}) {
        *v /= n;
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void append_epoch(std::vector<CheckpointBlock>& blocks, std::size_t epoch) {
    CheckpointBlock block;
    block.name = "state/epoch";
    block.shape = {1};
    block.values = {static_cast<double>(epoch)};
    blocks.push_back(std::move(block));
}

}  // namespace

// ---- Trainer ----------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(const InteractionDataset& ds, TrainConfig cfg, std::size_t threads)
    : ds_(&ds),
      cfg_((cfg.validate(), std::move(cfg))),
      threads_(threads),
      context_(std::make_unique<GraphContext>(build_context(ds, cfg_, threads))),
      model_(*context_, cfg_),
      train_pairs_(train_pairs_of(ds)) {
    const std::size_t n = context_->graph.num_nodes();
    teacher_ = init_model<T>(cfg_, n, cfg_.seed, "teacher");
    if (cfg_.use_distillation && cfg_.distill_mode == "student") {
        student_ = init_model<T>(cfg_, n, cfg_.seed, "student");
        has_student_ = true;
    }
    if (cfg_.use_distillation && cfg_.distill_mode == "ema") {
        ema_ = init_model<T>(cfg_, n, cfg_.seed, "ema");
        copy_values(teacher_, ema_);
        has_ema_ = true;
    }
    for (std::uint32_t u = 0; u < ds.num_users; ++u) {
        user_rows_.push_back(u);
    }
    for (std::uint32_t p = 0; p < ds.num_items; ++p) {
        item_rows_.push_back(static_cast<std::uint32_t>(ds.num_users + p));
    }
}

template <typename T>
EmbeddingBundle<T> Trainer<T>::bundle(const ad::Tensor<T>& s, const ad::Tensor<T>& e_r,
                                      const ad::Tensor<T>& e_c) const {
    EmbeddingBundle<T> b;
    b.user = ad::gather_rows(s, user_rows_);
    b.item = ad::gather_rows(s, item_rows_);
    b.contrastive = ad::concat_rows<T>({e_r, e_c});
    b.subgraph = ad::concat_rows<T>({ad::mean_rows(s), ad::mean_rows(e_r), ad::mean_rows(e_c)});
    return b;
}

template <typename T>
std::vector<std::uint32_t> Trainer<T>::rec_candidates(std::span<const Interaction> batch, Rng& rng) const {
    const std::size_t num_items = ds_->num_items;
    if (cfg_.rec_candidates == 0 || cfg_.rec_candidates >= num_items) {
        return {};
    }
    std::vector<std::uint32_t> all(num_items);
    std::iota(all.begin(), all.end(), 0u);
    std::vector<std::uint32_t> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), cfg_.rec_candidates, rng);
    for (const auto& x : batch) {
        picked.push_back(x.item);
    }
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    return picked;
}

template <typename T>
EpochRecord Trainer<T>::train_epoch() {
    const auto start = std::chrono::steady_clock::now();
    ++epoch_;
    EpochRecord record;
    record.epoch = epoch_;

    const auto& g = context_->graph;
    const auto& train_items = context_->train_items;
    const std::size_t num_users = ds_->num_users;
    const std::uint64_t epoch_seed = derive_seed(cfg_.seed, "epoch", epoch_);

    // Rationale scores and the three sampled views are fixed for the epoch.
    const auto scores = model_.score_edges(teacher_);
    record.prob_sum = std::accumulate(scores.probs.begin(), scores.probs.end(), 0.0);
    if (std::abs(record.prob_sum - 1.0) > 1e-6) {
        spdlog::warn("epoch {}: rationale probabilities sum to {:.9f}", epoch_, record.prob_sum);
    }
    const auto rationale = sample_rationale(scores, cfg_.rho_r, epoch_seed);
    const auto masked = build_masked_graph(scores, cfg_.rho_m, cfg_.rho_r, epoch_seed);
    const auto complement = sample_complement(scores, cfg_.rho_c, cfg_.rho_m, epoch_seed);
    if (!dump_dir_.empty()) {
        std::filesystem::create_directories(dump_dir_);
        for (const auto* sub : {&rationale, &masked, &complement}) {
            dump_subgraph(dump_dir_ / fmt::format("epoch{:04}_{}.tsv", epoch_, to_string(sub->kind)), *sub, g);
        }
    }
    const auto g_r = g.subgraph(rationale.edge_indices);
    const auto g_m = g.subgraph(masked.edge_indices);
    const auto g_c = g.subgraph(complement.edge_indices);
    const auto adj_r = normalized_adjacency<T>(g_r);
    const auto adj_m = normalized_adjacency<T>(g_m);
    const auto adj_c = normalized_adjacency<T>(g_c);

    std::vector<Edge> masked_out;
    for (const auto e : masked_out_edges(masked, g.num_edges())) {
        masked_out.push_back(g.edges()[e]);
    }
    std::vector<std::uint32_t> mae_negatives;
    {
        auto rng = make_rng(cfg_.seed, "mae_negatives", epoch_);
        std::uniform_int_distribution<std::uint32_t> any(0, static_cast<std::uint32_t>(ds_->num_items - 1));
        for (const auto& e : masked_out) {
            const auto& owned = train_items[e.user_node];
            for (std::size_t k = 0; k < cfg_.mae_negatives; ++k) {
                mae_negatives.push_back(owned.size() < ds_->num_items ? draw_unowned(owned, ds_->num_items, rng)
                                                                      : any(rng));
            }
        }
    }

    auto order = train_pairs_;
    auto shuffle_rng = make_rng(cfg_.seed, "batches", epoch_);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto negative_rng = make_rng(cfg_.seed, "bpr", epoch_);
    auto candidate_rng = make_rng(cfg_.seed, "candidates", epoch_);

    const auto weights = cfg_.loss_weights();
    const bool need_views = weights.cir > 0.0 || ((has_student_ || has_ema_) && weights.distill > 0.0);
    const ad::AdamOptions adam{cfg_.lr};
    LossReport sum;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch) {
        const std::span<const Interaction> batch(order.data() + begin, std::min(cfg_.batch, order.size() - begin));
        LossTerms<T> terms;

        if (weights.rd > 0.0) {
            std::vector<std::uint32_t> users;
            users.reserve(batch.size());
            for (const auto& x : batch) {
                users.push_back(x.user);
            }
            const auto triples = negative_sample(train_items, ds_->num_items, users, negative_rng);
            if (!triples.empty()) {
                terms.rd = loss_bpr(model_.rationale_embeddings(teacher_), num_users, triples);
            }
        }

        const auto s = model_.encode(teacher_, g_m, adj_m);
        if (weights.rec > 0.0) {
            terms.rec = loss_rec(s, num_users, batch, rec_candidates(batch, candidate_rng));
        }
        if (weights.mae > 0.0) {
            terms.mae = cfg_.mae_literal ? loss_mae_literal(s, masked_out)
                                         : loss_mae(s, masked_out, mae_negatives, cfg_.mae_negatives, num_users);
        }
        ad::Tensor<T> e_r, e_c;
        if (need_views) {
            e_r = model_.local(teacher_, adj_r);
            e_c = model_.local(teacher_, adj_c);
        }
        if (weights.cir > 0.0) {
            terms.cir = loss_cir(e_r, e_c, weights.tau);
        }
        if (weights.distill > 0.0 && has_student_) {
            const auto s_student = model_.encode(student_, g_m, adj_m);
            terms.distill = loss_distill(bundle(s_student, model_.local(student_, adj_r), model_.local(student_, adj_c)),
                                         bundle(s, e_r, e_c));
        } else if (weights.distill > 0.0 && has_ema_) {
            const auto frozen = frozen_copy(ema_);
            terms.distill = loss_distill(bundle(s, e_r, e_c), bundle(model_.encode(frozen, g_m, adj_m),
                                                                     model_.local(frozen, adj_r),
                                                                     model_.local(frozen, adj_c)));
        }

        const auto total = total_loss(terms, weights, teacher_.set);
        for (const auto& name : loss_range_violations(total.report, terms.cir.defined() ? e_r.rows() : 0,
                                                      weights.tau, !cfg_.mae_literal)) {
            spdlog::warn("epoch {} step {}: loss term '{}' is outside its admissible range", epoch_,
                         record.steps + 1, name);
        }
        if (total.value.requires_grad()) {
            ad::backward(total.value);
        }
        ad::adam_step(teacher_.set, adam);
        if (has_student_) {
            ad::adam_step(student_.set, adam);
        }
        if (has_ema_) {
            blend_values(teacher_, ema_, cfg_.ema_decay);
        }
        add_into(sum, total.report);
        ++record.steps;
    }
    divide(sum, static_cast<double>(record.steps));
    record.loss = sum;
    record.seconds = seconds_since(start);
    return record;
}

template <typename T>
void Trainer<T>::snapshot() {
    snapshot_.clear();
    for (const auto& p : teacher_.set.entries()) {
        snapshot_.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
}

template <typename T>
void Trainer<T>::restore() {
    if (snapshot_.empty()) {
        return;
    }
    auto& entries = teacher_.set.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        std::copy(snapshot_[i].begin(), snapshot_[i].end(), entries[i].tensor.mutable_values().begin());
    }
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) const {
    std::vector<CheckpointBlock> blocks;
    append_parameters(blocks, teacher_.set, "teacher");
    if (has_student_) {
        append_parameters(blocks, student_.set, "student");
    }
    if (has_ema_) {
        append_parameters(blocks, ema_.set, "ema");
    }
    append_epoch(blocks, epoch_);
    write_checkpoint(path, blocks);
}

template <typename T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& path) {
    const auto blocks = read_checkpoint(path);
    restore_parameters(blocks, teacher_.set, "teacher");
    if (has_student_) {
        restore_parameters(blocks, student_.set, "student");
    }
    if (has_ema_) {
        restore_parameters(blocks, ema_.set, "ema");
    }
    epoch_ = static_cast<std::size_t>(find_block(blocks, "state/epoch").values.at(0));
}

template class Trainer<float>;
template class Trainer<double>;

// ---- BPR-MF -----------------------------------------------------------------

BprMf::BprMf(const InteractionDataset& ds, TrainConfig cfg)
    : ds_(&ds),
      cfg_((cfg.validate(), std::move(cfg))),
      train_items_(ds.items_by_user(Split::train)),
      train_pairs_(train_pairs_of(ds)) {
    auto rng = make_rng(cfg_.seed, "bprmf.init");
    std::normal_distribution<double> init(0.0, 0.1);
    user_.resize(ds.num_users * cfg_.latdim);
    item_.resize(ds.num_items * cfg_.latdim);
    for (auto& v : user_) {
        v = init(rng);
    }
    for (auto& v : item_) {
        v = init(rng);
    }
}

EpochRecord BprMf::train_epoch() {
    const auto start = std::chrono::steady_clock::now();
    ++epoch_;
    EpochRecord record;
    record.epoch = epoch_;
    record.prob_sum = 1.0;
    const std::size_t d = cfg_.latdim;
    auto order = train_pairs_;
    auto rng = make_rng(cfg_.seed, "bprmf.epoch", epoch_);
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    std::size_t updates = 0;
    for (const auto& x : order) {
        const auto& owned = train_items_[x.user];
        if (owned.size() >= ds_->num_items) {
            continue;
        }
        const auto negative = draw_unowned(owned, ds_->num_items, rng);
        double* u = &user_[x.user * d];
        double* pos = &item_[x.item * d];
        double* neg = &item_[negative * d];
        double margin = 0.0;
        for (std::size_t f = 0; f < d; ++f) {
            margin += u[f] * (pos[f] - neg[f]);
        }
        // softplus(-margin) and its derivative σ(-margin)
        loss += margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
        const double g = 1.0 / (1.0 + std::exp(margin));
        for (std::size_t f = 0; f < d; ++f) {
            const double uf = u[f];
            u[f] += cfg_.lr * (g * (pos[f] - neg[f]) - cfg_.reg * uf);
            pos[f] += cfg_.lr * (g * uf - cfg_.reg * pos[f]);
            neg[f] += cfg_.lr * (-g * uf - cfg_.reg * neg[f]);
        }
        ++updates;
    }
    record.steps = 1;
    record.loss.rd = updates > 0 ? loss / static_cast<double>(updates) : 0.0;
    record.loss.total = record.loss.rd;
    record.seconds = seconds_since(start);
    return record;
}

DenseMatrix BprMf::prediction() const {
    DenseMatrix s;
    s.rows = ds_->num_users + ds_->num_items;
    s.cols = cfg_.latdim;
    s.values = user_;
    s.values.insert(s.values.end(), item_.begin(), item_.end());
    return s;
}

void BprMf::snapshot() {
    saved_user_ = user_;
    saved_item_ = item_;
}

void BprMf::restore() {
    if (!saved_user_.empty()) {
        user_ = saved_user_;
        item_ = saved_item_;
    }
}

void BprMf::save_checkpoint(const std::filesystem::path& path) const {
    std::vector<CheckpointBlock> blocks;
    blocks.push_back({"bprmf.user", {ds_->num_users, cfg_.latdim}, 8, user_});
    blocks.push_back({"bprmf.item", {ds_->num_items, cfg_.latdim}, 8, item_});
    append_epoch(blocks, epoch_);
    write_checkpoint(path, blocks);
}

void BprMf::load_checkpoint(const std::filesystem::path& path) {
    const auto blocks = read_checkpoint(path);
    const auto& u = find_block(blocks, "bprmf.user");
    const auto& i = find_block(blocks, "bprmf.item");
    if (u.values.size() != user_.size() || i.values.size() != item_.size()) {
        throw DataError("checkpoint " + path.string() + " does not match the dataset dimensions");
    }
    user_ = u.values;
    item_ = i.values;
    epoch_ = static_cast<std::size_t>(find_block(blocks, "state/epoch").values.at(0));
}

// ---- fit --------------------------------------------------------------------

std::unique_ptr<Learner> make_learner(const InteractionDataset& ds, const TrainConfig& cfg, std::size_t threads) {
    if (cfg.model == "bprmf") {
        return std::make_unique<BprMf>(ds, cfg);
    }
    if (cfg.precision == 64) {
        return std::make_unique<Trainer<double>>(ds, cfg, threads);
    }
    return std::make_unique<Trainer<float>>(ds, cfg, threads);
}

FitResult fit(const InteractionDataset& ds, const TrainConfig& cfg, const FitOptions& options) {
    cfg.validate();
    const std::size_t threads = cfg.deterministic ? 1 : std::max<std::size_t>(1, options.threads);
    auto learner = make_learner(ds, cfg, threads);
    if (!options.dump_dir.empty()) {
        learner->set_dump_dir(options.dump_dir);
    }

    const bool has_val = ds.count(Split::val) > 0;
    if (!has_val) {
        spdlog::warn("validation split is empty, early stopping disabled");
    }
    std::ofstream log;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        std::ofstream(options.out_dir / "config.cfg") << dump_config(cfg);
        log.open(options.out_dir / "train_log.jsonl", std::ios::trunc);
        if (!log) {
            throw DataError("cannot write " + (options.out_dir / "train_log.jsonl").string());
        }
    }

    FitResult result;
    std::optional<double> best;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        EpochRecord record;
        try {
            record = learner->train_epoch();
        } catch (const ad::NumericError& err) {
            if (!options.out_dir.empty()) {
                learner->save_checkpoint(options.out_dir / "nonfinite.ckpt");
            }
            spdlog::error("epoch {}: {}", e, err.what());
            throw;
        }
        if (has_val && (e % cfg.eval_every == 0 || e == cfg.epochs)) {
            const auto val = evaluate(learner->prediction(), ds, Split::val, threads, {20});
            record.val_recall20 = val.recall_at(20);
            record.val_ndcg20 = val.ndcg_at(20);
            if (!best || *record.val_recall20 > *best) {
                best = record.val_recall20;
                result.best_epoch = e;
                learner->snapshot();
            }
        }
        spdlog::info("epoch {:>3}  loss {:.5f}  val recall@20 {}", e, record.loss.total,
                     record.val_recall20 ? fmt::format("{:.4f}", *record.val_recall20) : std::string("-"));
        if (log.is_open()) {
            log << record.to_json().dump() << '\n';
            log.flush();
        }
        if (options.on_epoch) {
            options.on_epoch(record);
        }
        result.history.push_back(record);
        result.epochs_run = e;
        if (has_val && cfg.patience > 0 && best && e - result.best_epoch >= cfg.patience) {
            spdlog::info("no validation improvement for {} epochs, stopping at epoch {}", cfg.patience, e);
            break;
        }
    }
    if (best) {
        learner->restore();
        result.best_val_recall20 = *best;
    } else {
        result.best_epoch = result.epochs_run;
    }
    result.embeddings = learner->prediction();
    if (!options.out_dir.empty()) {
        learner->save_checkpoint(options.out_dir / "model.ckpt");
    }
    return result;
}

}  // namespace rgtrec
