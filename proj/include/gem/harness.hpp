#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gem/error.hpp"
#include "gem/mask_set.hpp"
#include "gem/report.hpp"
#include "gem/strategies.hpp"
#include "gem/tasks.hpp"
#include "gem/toy_models.hpp"
#include "gem/training.hpp"

namespace gem {

struct PretrainConfig {
    std::uint64_t epochs = 20;
    OptimizerConfig optimizer;
};

struct ExperimentConfig {
    ToyModelSpec model;
    TaskSpec task;  // the fine-tuning (target) task; pre-training uses shift = 0
    PretrainConfig pretrain;
    OptimizerConfig optimizer;
    std::vector<std::string> strategies;
    std::vector<double> ratios;
    std::vector<std::uint64_t> seeds;
    std::uint64_t epochs = 10;
    double eps = kDefaultEps;
    GradientSource gradient_source = GradientSource::epoch;
    std::uint64_t gradient_batch_size = 32;
    std::uint64_t workers = 0;  // 0: GEM_WORKERS or 1
    std::string output_dir;

    void validate() const {
        if (strategies.empty()) throw UsageError("config: strategies must not be empty");
        if (ratios.empty()) throw UsageError("config: ratios must not be empty");
        if (seeds.empty()) throw UsageError("config: seeds must not be empty");
        for (const auto& s : strategies) strategy_info(s);
        for (double r : ratios) detail::require_ratio(r);
        std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size()) throw UsageError("config: duplicate seed");
        model.validate();
        task.validate();
        if (model.input_dim() != task.input_dim)
            throw UsageError("config: model input " + std::to_string(model.input_dim()) + " but task input_dim " +
                             std::to_string(task.input_dim));
        if (model.output_dim() != task.output_dim) throw UsageError("config: model outputs do not match task");
        if (task.classification() != (model.loss == LossKind::cross_entropy))
            throw UsageError("config: classification tasks need cross_entropy, regression tasks mse");
        optimizer.validate();
        pretrain.optimizer.validate();
        detail::require_eps(eps);
        if (gradient_batch_size == 0) throw UsageError("config: gradient_batch_size must be positive");
    }
};

namespace detail {

// Read an object, rejecting keys outside `allowed`.
inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw UsageError("config: '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw UsageError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline OptimizerConfig parse_optimizer_config(const nlohmann::json& j, const std::string& where) {
    check_keys(j, where, {"type", "lr", "beta1", "beta2", "eps", "weight_decay", "batch_size"});
    OptimizerConfig o;
    if (j.contains("type")) o.kind = parse_optimizer(j["type"].get<std::string>());
    read_opt(j, "lr", o.lr);
    read_opt(j, "beta1", o.beta1);
    read_opt(j, "beta2", o.beta2);
    read_opt(j, "eps", o.eps);
    read_opt(j, "weight_decay", o.weight_decay);
    read_opt(j, "batch_size", o.batch_size);
    return o;
}

inline nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
    return {{"type", to_string(o.kind)}, {"lr", o.lr},   {"beta1", o.beta1},
            {"beta2", o.beta2},          {"eps", o.eps}, {"weight_decay", o.weight_decay},
            {"batch_size", o.batch_size}};
}

}  // namespace detail

/// Parse a config document. Unknown keys are rejected at every level.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_opt;
    ExperimentConfig c;
    try {
        check_keys(j, "config",
                   {"model", "task", "pretrain", "optimizer", "strategies", "ratios", "seeds", "epochs", "eps",
                    "gradient_source", "gradient_batch_size", "workers", "output_dir"});
        if (j.contains("model")) {
            const auto& m = j["model"];
            check_keys(m, "model", {"kind", "dims", "activation", "bias", "d_model", "seq_len", "n_outputs", "loss"});
            if (m.contains("kind")) c.model.kind = parse_model_kind(m["kind"].get<std::string>());
            read_opt(m, "dims", c.model.dims);
            if (m.contains("activation")) c.model.activation = parse_activation(m["activation"].get<std::string>());
            read_opt(m, "bias", c.model.bias);
            read_opt(m, "d_model", c.model.d_model);
            read_opt(m, "seq_len", c.model.seq_len);
            read_opt(m, "n_outputs", c.model.n_outputs);
            if (m.contains("loss")) c.model.loss = parse_loss(m["loss"].get<std::string>());
        }
        if (j.contains("task")) {
            const auto& t = j["task"];
            check_keys(t, "task",
                       {"kind", "input_dim", "output_dim", "n_train", "n_eval", "noise", "separation", "shift",
                        "teacher_hidden"});
            if (t.contains("kind")) c.task.kind = parse_task_kind(t["kind"].get<std::string>());
            read_opt(t, "input_dim", c.task.input_dim);
            read_opt(t, "output_dim", c.task.output_dim);
            read_opt(t, "n_train", c.task.n_train);
            read_opt(t, "n_eval", c.task.n_eval);
            read_opt(t, "noise", c.task.noise);
            read_opt(t, "separation", c.task.separation);
            read_opt(t, "shift", c.task.shift);
            read_opt(t, "teacher_hidden", c.task.teacher_hidden);
        }
        if (j.contains("pretrain")) {
            const auto& p = j["pretrain"];
            check_keys(p, "pretrain", {"epochs", "optimizer"});
            read_opt(p, "epochs", c.pretrain.epochs);
            if (p.contains("optimizer")) c.pretrain.optimizer = detail::parse_optimizer_config(p["optimizer"], "pretrain.optimizer");
        }
        if (j.contains("optimizer")) c.optimizer = detail::parse_optimizer_config(j["optimizer"], "optimizer");
        read_opt(j, "strategies", c.strategies);
        read_opt(j, "ratios", c.ratios);
        read_opt(j, "seeds", c.seeds);
        read_opt(j, "epochs", c.epochs);
        read_opt(j, "eps", c.eps);
        if (j.contains("gradient_source")) c.gradient_source = parse_gradient_source(j["gradient_source"].get<std::string>());
        read_opt(j, "gradient_batch_size", c.gradient_batch_size);
        read_opt(j, "workers", c.workers);
        read_opt(j, "output_dir", c.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(p));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config '" + p.string() + "': " + e.what());
    }
    return parse_config(j);
}

/// Fully expanded config, defaults included.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["model"] = {{"kind", to_string(c.model.kind)},       {"dims", c.model.dims},
                  {"activation", to_string(c.model.activation)}, {"bias", c.model.bias},
                  {"d_model", c.model.d_model},             {"seq_len", c.model.seq_len},
                  {"n_outputs", c.model.n_outputs},         {"loss", to_string(c.model.loss)}};
    j["task"] = {{"kind", to_string(c.task.kind)},   {"input_dim", c.task.input_dim},
                 {"output_dim", c.task.output_dim},  {"n_train", c.task.n_train},
                 {"n_eval", c.task.n_eval},          {"noise", c.task.noise},
                 {"separation", c.task.separation},  {"shift", c.task.shift},
                 {"teacher_hidden", c.task.teacher_hidden}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs}, {"optimizer", detail::optimizer_to_json(c.pretrain.optimizer)}};
    j["optimizer"] = detail::optimizer_to_json(c.optimizer);
    j["strategies"] = c.strategies;
    j["ratios"] = c.ratios;
    j["seeds"] = c.seeds;
    j["epochs"] = c.epochs;
    j["eps"] = c.eps;
    j["gradient_source"] = to_string(c.gradient_source);
    j["gradient_batch_size"] = c.gradient_batch_size;
    j["workers"] = c.workers;
    j["output_dir"] = c.output_dir;
    return j;
}

struct CellResult {
    std::string strategy;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t budget = 0;
    double captured_share = 0.0;  // at mask time
    AllocationPlan plan;
    std::vector<TrainRecord> records;
    MaskSet masks;
};

struct Report {
    ExperimentConfig config;
    std::vector<CellResult> cells;
    ReportTables tables;
};

inline std::string cell_id(const std::string& strategy, double ratio, std::uint64_t seed) {
    return strategy + "_r" + format_double(ratio) + "_s" + std::to_string(seed);
}

/// Per-seed "pre-trained" state shared by every cell of that seed.
struct SeedContext {
    ModelSnapshot w0;
    GradientSnapshot g0;
    TaskData target;
};

inline SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    ToyModelSpec spec = cfg.model;
    spec.seed = seed;
    TaskSpec source = cfg.task;
    source.shift = 0.0;
    source.seed = seed;
    TaskSpec target = cfg.task;
    target.seed = seed;

    const auto source_data = make_task(source);
    SeedContext ctx;
    ctx.w0 = pretrain(spec, init_model(spec), source_data.train, cfg.pretrain.optimizer, cfg.pretrain.epochs, seed);
    ctx.target = make_task(target);
    ctx.g0 = accumulate_gradient(spec, ctx.w0, ctx.target.train, cfg.gradient_source, cfg.gradient_batch_size, seed);
    return ctx;
}

inline CellResult run_cell(const ExperimentConfig& cfg, const SeedContext& ctx, const std::string& strategy,
                           double ratio, std::uint64_t seed) {
    ToyModelSpec spec = cfg.model;
    spec.seed = seed;
    StrategySpec ss{strategy, ratio, cfg.eps, seed};
    CellResult cell;
    cell.strategy = strategy;
    cell.ratio = ratio;
    cell.seed = seed;
    cell.masks = make_mask(ss, ctx.w0, ctx.g0, std::string("toy:") + to_string(cfg.gradient_source));
    cell.plan = cell.masks.provenance.plan;
    cell.budget = cell.masks.total_selected();
    cell.captured_share = mask_captured_share(ctx.w0, ctx.g0, cell.masks, cfg.eps);
    cell.records = train_masked(spec, ctx.w0, ctx.target, cell.masks, cfg.optimizer, cfg.epochs, seed, ctx.g0, cfg.eps).records;
    return cell;
}

inline std::uint64_t worker_count(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("GEM_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::uint64_t>(n);
    }
    return cfg.workers > 0 ? cfg.workers : 1;
}

namespace detail {

template <typename F>
void parallel_for(std::size_t n, std::uint64_t workers, F&& body) {
    std::atomic<std::size_t> next{0};
    auto loop = [&] {
        for (std::size_t i = next++; i < n; i = next++) body(i);
    };
    const auto k = std::min<std::uint64_t>(workers, n);
    if (k <= 1) {
        loop();
        return;
    }
    std::vector<std::thread> pool;
    for (std::uint64_t t = 0; t < k; ++t) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
}

inline CsvTable cells_table(const std::vector<const CellResult*>& cells) {
    CsvTable t;
    t.header = {"strategy", "ratio", "seed", "budget", "captured_share", "final_loss", "final_metric", "rel_change",
                "loss_red_proxy"};
    for (const auto* c : cells) {
        std::vector<std::string> row{c->strategy, format_double(c->ratio), std::to_string(c->seed),
                                     std::to_string(c->budget), format_double(c->captured_share)};
        if (c->records.empty()) {
            row.insert(row.end(), 4, std::string());
        } else {
            const auto& last = c->records.back();
            for (double v : {last.loss, last.metric, last.rel_change, last.loss_red_proxy})
                row.push_back(format_double(v));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable records_table(const std::vector<const CellResult*>& cells) {
    CsvTable t;
    t.header = {"strategy", "ratio", "seed", "epoch", "loss", "metric", "rel_change", "loss_red_proxy", "captured_share"};
    for (const auto* c : cells)
        for (const auto& r : c->records)
            t.rows.push_back({c->strategy, format_double(c->ratio), std::to_string(c->seed), std::to_string(r.epoch),
                              format_double(r.loss), format_double(r.metric), format_double(r.rel_change),
                              format_double(r.loss_red_proxy), format_double(r.captured_share)});
    return t;
}

}  // namespace detail

/// Write cells.csv, records.csv, masks/ and plans/ for the completed cells.
inline void write_cells(const std::filesystem::path& dir, const std::vector<const CellResult*>& cells) {
    std::filesystem::create_directories(dir / "masks");
    std::filesystem::create_directories(dir / "plans");
    detail::cells_table(cells).write(dir / "cells.csv");
    detail::records_table(cells).write(dir / "records.csv");
    for (const auto* c : cells) {
        const auto id = cell_id(c->strategy, c->ratio, c->seed);
        save_masks(c->masks, dir / "masks" / (id + ".gemm"));
        detail::write_file(dir / "plans" / (id + ".json"), nlohmann::json(c->plan).dump(2) + "\n");
    }
}

/// Run every (strategy x ratio x seed) cell: pre-train once per seed,
/// snapshot W_0 and g_0, build masks, fine-tune, record. Output files are a
/// pure function of the config.
inline Report run_experiment(const ExperimentConfig& cfg, std::optional<std::filesystem::path> out_dir = {}) {
    cfg.validate();
    const std::filesystem::path dir = out_dir ? *out_dir : std::filesystem::path(cfg.output_dir);
    if (dir.empty()) throw UsageError("no output directory given");
    std::filesystem::create_directories(dir);
    {
        auto cj = config_to_json(cfg);
        cj.erase("output_dir");
        cj.erase("workers");
        detail::write_file(dir / "config.json", cj.dump(2) + "\n");
    }
    const auto workers = worker_count(cfg);

    std::vector<SeedContext> contexts(cfg.seeds.size());
    std::vector<std::exception_ptr> seed_errors(cfg.seeds.size());
    detail::parallel_for(cfg.seeds.size(), workers, [&](std::size_t i) {
        try {
            contexts[i] = prepare_seed(cfg, cfg.seeds[i]);
        } catch (...) {
            seed_errors[i] = std::current_exception();
        }
    });
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        if (!seed_errors[i]) continue;
        try {
            std::rethrow_exception(seed_errors[i]);
        } catch (const std::exception& e) {
            throw DataError("pre-training for seed " + std::to_string(cfg.seeds[i]) + " failed: " + e.what());
        }
    }

    struct Job {
        std::size_t strategy, ratio, seed;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < cfg.strategies.size(); ++s)
        for (std::size_t r = 0; r < cfg.ratios.size(); ++r)
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k) jobs.push_back({s, r, k});

    Report report;
    report.config = cfg;
    report.cells.resize(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    detail::parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const auto& jb = jobs[i];
        try {
            report.cells[i] = run_cell(cfg, contexts[jb.seed], cfg.strategies[jb.strategy], cfg.ratios[jb.ratio],
                                       cfg.seeds[jb.seed]);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });

    std::vector<const CellResult*> done;
    for (std::size_t i = 0; i < jobs.size(); ++i)
        if (!errors[i]) done.push_back(&report.cells[i]);
    write_cells(dir, done);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!errors[i]) continue;
        const auto& jb = jobs[i];
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            throw DataError("cell " + cell_id(cfg.strategies[jb.strategy], cfg.ratios[jb.ratio], cfg.seeds[jb.seed]) +
                            " failed: " + e.what());
        }
    }
    report.tables = write_report_tables(dir);
    return report;
}

}  // namespace gem
