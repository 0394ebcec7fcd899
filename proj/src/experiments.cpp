#include "rgtrec/experiments.hpp"

#include <map>
#include <ostream>

#include <spdlog/spdlog.h>

#include "rgtrec/errors.hpp"

namespace rgtrec {

std::vector<Variant> component_variants() {
    return {
        {"components", "GT",
         {{"use_topology", "false"},
          {"use_residual", "false"},
          {"use_output_projection", "false"},
          {"use_distillation", "false"}}},
        {"components", "RGT+LA", {{"use_distillation", "false"}}},
        {"components", "AD", {}},
    };
}

std::vector<Variant> loss_variants() {
    return {
        {"losses", "full", {}},
        {"losses", "-L_RD", {{"lambda_rd", "0"}}},
        {"losses", "-L_Rec", {{"lambda_rec", "0"}}},
        {"losses", "-L_distill", {{"use_distillation", "false"}}},
        {"losses", "-reg", {{"reg", "0"}}},
    };
}

TrainConfig apply_overrides(TrainConfig cfg, const Overrides& overrides) {
    for (const auto& [key, value] : overrides) {
        set_config_value(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

std::vector<RunResult> run_variants(const InteractionDataset& ds, const TrainConfig& base,
                                    const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                                    std::size_t threads, const std::function<void(const RunResult&)>& on_run) {
    std::map<std::string, RunResult> cache;
    std::vector<RunResult> runs;
    for (const auto seed : seeds) {
        for (const auto& variant : variants) {
            auto cfg = apply_overrides(base, variant.overrides);
            cfg.seed = seed;
            const auto key = dump_config(cfg);
            auto it = cache.find(key);
            if (it == cache.end()) {
                spdlog::info("training {}/{} seed {}", variant.study, variant.name, seed);
                FitOptions options;
                options.threads = threads;
                const auto fitted = fit(ds, cfg, options);
                RunResult run;
                run.test = evaluate(fitted.embeddings, ds, Split::test, cfg.deterministic ? 1 : threads);
                run.history = fitted.history;
                it = cache.emplace(key, std::move(run)).first;
            }
            RunResult run = it->second;
            run.study = variant.study;
            run.variant = variant.name;
            run.seed = seed;
            if (on_run) {
                on_run(run);
            }
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

void write_ablation_csv(std::ostream& out, const std::vector<RunResult>& runs) {
    out << "study,variant,seed,recall@40,ndcg@40\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& run : runs) {
        out << run.study << ',' << run.variant << ',' << run.seed << ',' << run.test.recall_at(40) << ','
            << run.test.ndcg_at(40) << '\n';
    }
}

void write_series_csv(std::ostream& out, const std::vector<RunResult>& runs) {
    out << "study,variant,seed,epoch,loss,val_recall@20\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& run : runs) {
        for (const auto& record : run.history) {
            out << run.study << ',' << run.variant << ',' << run.seed << ',' << record.epoch << ','
                << record.loss.total << ',';
            if (record.val_recall20) {
                out << *record.val_recall20;
            }
            out << '\n';
        }
    }
}

std::vector<Overrides> expand_grid(const std::vector<std::string>& axes) {
    std::vector<Overrides> grid{{}};
    for (const auto& axis : axes) {
        const auto eq = axis.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == axis.size()) {
            throw ConfigError("grid axis '" + axis + "' must look like key=v1,v2");
        }
        const std::string key = axis.substr(0, eq);
        std::vector<std::string> values;
        std::size_t start = eq + 1;
        while (start <= axis.size()) {
            const auto comma = axis.find(',', start);
            const auto end = comma == std::string::npos ? axis.size() : comma;
            values.push_back(axis.substr(start, end - start));
            start = end + 1;
        }
        TrainConfig probe;
        for (const auto& v : values) {
            set_config_value(probe, key, v);
        }
        std::vector<Overrides> next;
        for (const auto& partial : grid) {
            for (const auto& v : values) {
                auto extended = partial;
                extended.emplace_back(key, v);
                next.push_back(std::move(extended));
            }
        }
        grid = std::move(next);
    }
    return grid;
}

}  // namespace rgtrec
