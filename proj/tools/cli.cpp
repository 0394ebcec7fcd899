#include "cli.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "rgtrec/config.hpp"
#include "rgtrec/errors.hpp"
#include "rgtrec/evaluator.hpp"
#include "rgtrec/experiments.hpp"
#include "rgtrec/graph_store.hpp"
#include "rgtrec/parallel.hpp"
#include "rgtrec/trainer.hpp"

namespace rgtrec::cli {

namespace {

namespace fs = std::filesystem;

// `--key value` or `--key=value` pairs left over after the fixed options.
Overrides parse_overrides(const std::vector<std::string>& tokens) {
    Overrides out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& token = tokens[i];
        if (token.rfind("--", 0) != 0 || token.size() < 3) {
            throw CLI::ExtrasError("unexpected argument '" + token + "'", CLI::ExitCodes::ExtrasError);
        }
        const auto eq = token.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(token.substr(2, eq - 2), token.substr(eq + 1));
            continue;
        }
        if (i + 1 >= tokens.size()) {
            throw CLI::ExtrasError("option '" + token + "' needs a value", CLI::ExitCodes::ExtrasError);
        }
        out.emplace_back(token.substr(2), tokens[++i]);
    }
    return out;
}

struct ConfigSource {
    std::string path;
    std::vector<std::string> extras;

    TrainConfig resolve() const {
        TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
        return apply_overrides(cfg, parse_overrides(extras));
    }
};

SplitRatios parse_ratios(const std::string& text) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            values.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw ConfigError("ratios must be three comma-separated numbers, got '" + text + "'");
        }
    }
    if (values.size() != 3) {
        throw ConfigError("ratios must be three comma-separated numbers, got '" + text + "'");
    }
    return SplitRatios{values[0], values[1], values[2]};
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    return out;
}

void print_summary(const RankingResult& result, Split split) {
    for (std::size_t c = 0; c < result.cutoffs.size(); ++c) {
        std::cout << fmt::format("{:<5} Recall@{:<3} {:.4f}   NDCG@{:<3} {:.4f}\n", to_string(split),
                                 result.cutoffs[c], result.recall[c], result.cutoffs[c], result.ndcg[c]);
    }
}

// ---- commands ---------------------------------------------------------------

struct PrepareArgs {
    std::string input;
    std::string format;
    std::string out;
    std::string ratios = "0.7,0.05,0.25";
    std::uint64_t seed = 1;
    bool synthetic = false;
    BlockDatasetOptions blocks;
};

int prepare(const PrepareArgs& a) {
    InteractionDataset ds;
    if (a.synthetic) {
        ds = make_block_dataset(a.blocks, a.seed);
    } else {
        if (a.input.empty()) {
            throw ConfigError("prepare needs --input or --synthetic");
        }
        InputFormat format = format_for_path(a.input);
        if (a.format == "csv") {
            format = InputFormat::csv_pairs;
        } else if (a.format == "tsv") {
            format = InputFormat::tsv_pairs;
        }
        ds = load_interactions(a.input, format);
    }
    ds = split(std::move(ds), parse_ratios(a.ratios), a.seed);
    write_manifest(ds, a.out);
    std::cout << fmt::format("{} users, {} items, {} interactions (train {}, val {}, test {}) -> {}\n", ds.num_users,
                             ds.num_items, ds.interactions.size(), ds.count(Split::train), ds.count(Split::val),
                             ds.count(Split::test), a.out);
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string out = "run";
    std::size_t threads = worker_threads();
    bool per_user = false;
    std::string dump_subgraphs;
    ConfigSource config;
};

int train(const TrainArgs& a) {
    const auto cfg = a.config.resolve();
    const auto ds = read_manifest(a.data);
    FitOptions options;
    options.out_dir = a.out;
    options.threads = a.threads;
    options.dump_dir = a.dump_subgraphs;
    const auto fitted = fit(ds, cfg, options);
    const std::size_t threads = cfg.deterministic ? 1 : a.threads;
    auto metrics = open_output(fs::path(a.out) / "metrics.csv");
    bool header = true;
    for (const auto split : {Split::val, Split::test}) {
        if (ds.count(split) == 0) {
            continue;
        }
        const auto result = evaluate(fitted.embeddings, ds, split, threads);
        write_metrics_csv(metrics, split, result, header);
        header = false;
        print_summary(result, split);
        if (a.per_user && split == Split::test) {
            auto per_user = open_output(fs::path(a.out) / "per_user.tsv");
            write_per_user_tsv(per_user, result, ds);
        }
    }
    std::cout << fmt::format("best epoch {} of {}; outputs in {}\n", fitted.best_epoch, fitted.epochs_run, a.out);
    return 0;
}

struct EvaluateArgs {
    std::string data;
    std::string run_dir;
    std::string checkpoint;
    std::string split = "test";
    std::string out;
    std::string per_user;
    std::size_t threads = worker_threads();
};

int evaluate_command(const EvaluateArgs& a) {
    const auto cfg = load_config(fs::path(a.run_dir) / "config.cfg");
    cfg.validate();
    const auto ds = read_manifest(a.data);
    const auto split = parse_split(a.split);
    auto learner = make_learner(ds, cfg, cfg.deterministic ? 1 : a.threads);
    learner->load_checkpoint(a.checkpoint.empty() ? fs::path(a.run_dir) / "model.ckpt" : fs::path(a.checkpoint));
    const auto result = evaluate(learner->prediction(), ds, split, cfg.deterministic ? 1 : a.threads);
    if (a.out.empty()) {
        write_metrics_csv(std::cout, split, result);
    } else {
        auto out = open_output(a.out);
        write_metrics_csv(out, split, result);
        print_summary(result, split);
    }
    if (!a.per_user.empty()) {
        auto out = open_output(a.per_user);
        write_per_user_tsv(out, result, ds);
    }
    return 0;
}

struct AblateArgs {
    std::string data;
    std::string out = "ablation";
    std::string study = "all";
    std::size_t seeds = 5;
    std::size_t threads = worker_threads();
    ConfigSource config;
};

int ablate(const AblateArgs& a) {
    const auto cfg = a.config.resolve();
    const auto ds = read_manifest(a.data);
    std::vector<Variant> variants;
    if (a.study == "components" || a.study == "all") {
        const auto v = component_variants();
        variants.insert(variants.end(), v.begin(), v.end());
    }
    if (a.study == "losses" || a.study == "all") {
        const auto v = loss_variants();
        variants.insert(variants.end(), v.begin(), v.end());
    }
    if (variants.empty()) {
        throw ConfigError("--study must be components, losses or all");
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < a.seeds; ++s) {
        seeds.push_back(cfg.seed + s);
    }
    const auto runs = run_variants(ds, cfg, variants, seeds, a.threads);
    auto table = open_output(fs::path(a.out) / "ablation.csv");
    write_ablation_csv(table, runs);
    auto series = open_output(fs::path(a.out) / "ablation_series.csv");
    write_series_csv(series, runs);

    std::map<std::pair<std::string, std::string>, std::pair<double, double>> sums;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& run : runs) {
        const auto key = std::make_pair(run.study, run.variant);
        if (!sums.count(key)) {
            order.push_back(key);
        }
        sums[key].first += run.test.recall_at(40);
        sums[key].second += run.test.ndcg_at(40);
    }
    for (const auto& key : order) {
        const double n = static_cast<double>(a.seeds);
        std::cout << fmt::format("{:<11} {:<11} Recall@40 {:.4f}  NDCG@40 {:.4f}\n", key.first, key.second,
                                 sums[key].first / n, sums[key].second / n);
    }
    return 0;
}

struct GridArgs {
    std::string data;
    std::string out = "grid";
    std::vector<std::string> axes;
    std::size_t threads = worker_threads();
    ConfigSource config;
};

int grid(const GridArgs& a) {
    const auto base = a.config.resolve();
    const auto ds = read_manifest(a.data);
    const auto points = expand_grid(a.axes);
    auto table = open_output(fs::path(a.out) / "grid.csv");
    table << "point,best_epoch,val_recall@20,test_recall@20,test_recall@40,test_ndcg@40\n";
    table.precision(6);
    table << std::fixed;
    for (const auto& point : points) {
        const auto cfg = apply_overrides(base, point);
        std::string label;
        for (const auto& [key, value] : point) {
            label += (label.empty() ? "" : ";") + key + "=" + value;
        }
        FitOptions options;
        options.threads = a.threads;
        const auto fitted = fit(ds, cfg, options);
        const auto test = evaluate(fitted.embeddings, ds, Split::test, cfg.deterministic ? 1 : a.threads);
        table << label << ',' << fitted.best_epoch << ',' << fitted.best_val_recall20 << ',' << test.recall_at(20)
              << ',' << test.recall_at(40) << ',' << test.ndcg_at(40) << '\n';
        table.flush();
        std::cout << fmt::format("{:<40} test Recall@20 {:.4f}\n", label, test.recall_at(20));
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Rationale-aware graph transformer recommender"};
    app.require_subcommand(1);
    std::string log_level = "info";

    PrepareArgs prep;
    auto* prepare_cmd = app.add_subcommand("prepare", "split raw interactions into a manifest");
    prepare_cmd->add_option("--input", prep.input, "user/item pair file");
    prepare_cmd->add_option("--format", prep.format, "tsv or csv (default: by extension)");
    prepare_cmd->add_flag("--synthetic", prep.synthetic, "generate a block-structured dataset instead");
    prepare_cmd->add_option("--out", prep.out, "output directory")->required();
    prepare_cmd->add_option("--ratios", prep.ratios, "train,val,test fractions");
    prepare_cmd->add_option("--seed", prep.seed);
    prepare_cmd->add_option("--users", prep.blocks.users);
    prepare_cmd->add_option("--items", prep.blocks.items);
    prepare_cmd->add_option("--blocks", prep.blocks.blocks);
    prepare_cmd->add_option("--per-user", prep.blocks.interactions_per_user);
    prepare_cmd->add_option("--within-block", prep.blocks.within_block);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train a model; extra --<key> <value> pairs override the config");
    train_cmd->add_option("--data", tr.data, "prepared data directory")->required();
    train_cmd->add_option("--config", tr.config.path);
    train_cmd->add_option("--out", tr.out, "run directory");
    train_cmd->add_option("--threads", tr.threads);
    train_cmd->add_flag("--per-user", tr.per_user, "also write per-user test metrics");
    train_cmd->add_option("--dump-subgraphs", tr.dump_subgraphs, "directory for per-epoch sampled edge lists");
    train_cmd->allow_extras();

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a trained run");
    evaluate_cmd->add_option("--data", ev.data)->required();
    evaluate_cmd->add_option("--run", ev.run_dir, "run directory with config.cfg and model.ckpt")->required();
    evaluate_cmd->add_option("--checkpoint", ev.checkpoint);
    evaluate_cmd->add_option("--split", ev.split, "val or test");
    evaluate_cmd->add_option("--out", ev.out, "metrics CSV (default: stdout)");
    evaluate_cmd->add_option("--per-user", ev.per_user, "per-user TSV");
    evaluate_cmd->add_option("--threads", ev.threads);

    AblateArgs ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "component and loss ablations over several seeds");
    ablate_cmd->add_option("--data", ab.data)->required();
    ablate_cmd->add_option("--config", ab.config.path);
    ablate_cmd->add_option("--out", ab.out);
    ablate_cmd->add_option("--study", ab.study, "components, losses or all");
    ablate_cmd->add_option("--seeds", ab.seeds);
    ablate_cmd->add_option("--threads", ab.threads);
    ablate_cmd->allow_extras();

    GridArgs gr;
    auto* grid_cmd = app.add_subcommand("grid", "train every point of a hyperparameter grid");
    grid_cmd->add_option("--data", gr.data)->required();
    grid_cmd->add_option("--config", gr.config.path);
    grid_cmd->add_option("--grid", gr.axes, "key=v1,v2 (repeatable)")->required();
    grid_cmd->add_option("--out", gr.out);
    grid_cmd->add_option("--threads", gr.threads);
    grid_cmd->allow_extras();

    ConfigSource dump;
    auto* dump_cmd = app.add_subcommand("dump-config", "print the resolved configuration");
    dump_cmd->add_option("--config", dump.path);
    dump_cmd->allow_extras();

    for (auto* sub : app.get_subcommands({})) {
        sub->add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));
        if (prepare_cmd->parsed()) {
            return prepare(prep);
        }
        if (train_cmd->parsed()) {
            tr.config.extras = train_cmd->remaining();
            return train(tr);
        }
        if (evaluate_cmd->parsed()) {
            return evaluate_command(ev);
        }
        if (ablate_cmd->parsed()) {
            ab.config.extras = ablate_cmd->remaining();
            return ablate(ab);
        }
        if (grid_cmd->parsed()) {
            gr.config.extras = grid_cmd->remaining();
            return grid(gr);
        }
        if (dump_cmd->parsed()) {
            dump.extras = dump_cmd->remaining();
            std::cout << dump_config(dump.resolve());
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace rgtrec::cli
