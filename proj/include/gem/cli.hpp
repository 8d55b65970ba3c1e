#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gem/error.hpp"
#include "gem/harness.hpp"
#include "gem/mask_set.hpp"
#include "gem/model_store.hpp"
#include "gem/report.hpp"
#include "gem/strategies.hpp"

// Exit codes: 0 success, 1 usage error, 2 data error.

namespace gem::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;

namespace detail {

inline std::string fixed(double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

inline void print_plan(std::ostream& out, const AllocationPlan& plan) {
    out << "allocator " << plan.allocator << "  ratio " << format_double(plan.ratio) << "  N " << plan.total_params
        << "  B " << plan.total_budget << (plan.fallback_uniform ? "  (uniform fallback)" : "") << "\n";
    out << std::left << std::setw(24) << "layer" << std::right << std::setw(12) << "params" << std::setw(10) << "k"
        << std::setw(12) << "gamma" << std::setw(12) << "entropy" << std::setw(14) << "importance" << "\n";
    for (const auto& l : plan.layers)
        out << std::left << std::setw(24) << l.layer_name << std::right << std::setw(12) << l.param_count
            << std::setw(10) << l.budget << std::setw(12) << fixed(l.share, 6) << std::setw(12) << fixed(l.entropy, 6)
            << std::setw(14) << fixed(l.importance, 6) << "\n";
}

}  // namespace detail

inline int cmd_build_mask(const std::string& weights, const std::string& grads, double ratio,
                          const std::string& strategy, const std::string& out_path, double eps, std::uint64_t seed,
                          const std::string& plan_path, const std::vector<std::string>& layers, bool qv_only,
                          std::ostream& out) {
    auto w0 = load_snapshot(weights);
    const auto g0 = load_gradients(grads);
    if (qv_only) apply_tunable_patterns(w0, kDefaultTunablePatterns);
    if (!layers.empty()) apply_tunable_patterns(w0, layers);
    const auto ms = make_mask(StrategySpec{strategy, ratio, eps, seed}, w0, g0, "file:" + grads);
    save_masks(ms, out_path);
    const std::string plan_out = plan_path.empty() ? out_path + ".plan.json" : plan_path;
    gem::detail::write_file(plan_out, nlohmann::json(ms.provenance.plan).dump(2) + "\n");

    out << "B = " << ms.provenance.plan.total_budget << "\n";
    for (const auto& l : ms.provenance.plan.layers) out << l.layer_name << "\tk = " << l.budget << "\n";
    out << "captured GWR share " << format_double(mask_captured_share(w0, g0, ms, eps)) << "\n";
    out << "wrote " << out_path << " and " << plan_out << "\n";
    return kOk;
}

inline int cmd_inspect(const std::string& path, std::ostream& out) {
    const auto ms = load_masks(path);
    const auto& p = ms.provenance;
    out << "mask file " << path << "\n";
    out << "strategy " << p.strategy << "  eps " << format_double(p.eps) << "  seed " << p.seed << "  gradients "
        << (p.gradient_source.empty() ? "-" : p.gradient_source) << "\n";
    out << "selected " << ms.total_selected() << " across " << ms.layers.size() << " layers\n";
    detail::print_plan(out, p.plan);
    return kOk;
}

inline int cmd_train(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
    const auto cfg = load_config(config_path);
    std::optional<std::filesystem::path> dir;
    if (!out_dir.empty()) dir = out_dir;
    const auto report = run_experiment(cfg, dir);
    out << "ran " << report.cells.size() << " cells into " << (dir ? *dir : std::filesystem::path(cfg.output_dir)).string()
        << "\n";
    return kOk;
}

inline int cmd_report(const std::string& run_dir, std::ostream& out) {
    const auto t = write_report_tables(run_dir);
    const auto& a = t.aggregate;
    out << std::left << std::setw(22) << "strategy" << std::setw(10) << "ratio" << std::setw(7) << "seeds";
    for (auto m : kCellMetrics) out << std::setw(26) << m;
    out << "\n";
    for (const auto& row : a.rows) {
        out << std::left << std::setw(22) << row[0] << std::setw(10) << row[1] << std::setw(7) << row[2];
        for (std::size_t k = 0; k < std::size(kCellMetrics); ++k) {
            const auto& m = row[3 + 2 * k];
            const auto& s = row[4 + 2 * k];
            out << std::setw(26)
                << (m.empty() ? std::string("-")
                              : detail::fixed(parse_double(m), 5) + " +- " + detail::fixed(parse_double(s), 5));
        }
        out << "\n";
    }
    out << "wrote aggregate.csv, fig2.csv, table2.csv\n";
    return kOk;
}

/// Entry point shared by the gem binary and the tests. args excludes argv[0].
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse fine-tuning masks from gradient-to-weight ratios", "gem"};
    app.require_subcommand(1);

    std::string weights, grads, strategy = "gem", mask_out, plan_out;
    double ratio = 0.0, eps = kDefaultEps;
    std::uint64_t seed = 0;
    std::vector<std::string> layers;
    bool qv_only = false;
    auto* build = app.add_subcommand("build-mask", "Build masks from a weight and a gradient snapshot");
    build->add_option("--weights", weights, "Weight manifest (file or directory)")->required();
    build->add_option("--grads", grads, "Gradient manifest (file or directory)")->required();
    build->add_option("--ratio", ratio, "Tunable fraction r in (0, 1]")->required();
    build->add_option("--strategy", strategy, "One of: gem, random, top_gradient, gwr_uniform, ...");
    build->add_option("--out", mask_out, "Output mask file")->required();
    build->add_option("--eps", eps, "Denominator clamp for |w|");
    build->add_option("--seed", seed, "Seed for the random strategy");
    build->add_option("--plan", plan_out, "Allocation JSON path (default <out>.plan.json)");
    build->add_option("--layers", layers, "Regex patterns selecting tunable layers (overrides manifest flags)");
    build->add_flag("--qv-only", qv_only, "Restrict to query/value projection layers");

    std::string config_path, train_out;
    auto* train = app.add_subcommand("train", "Run an experiment config");
    train->add_option("--config", config_path, "Experiment JSON")->required();
    train->add_option("--out", train_out, "Report directory (default: output_dir from config)");

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Aggregate a run directory");
    report->add_option("dir", run_dir, "Run directory")->required();

    std::string mask_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize a mask file");
    inspect->add_option("file", mask_path, "Mask file")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, er;
        const int code = app.exit(e, o, er);
        out << o.str();
        err << er.str();
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*build) {
            if (!std::isfinite(ratio)) throw UsageError("ratio must be finite");
            return cmd_build_mask(weights, grads, ratio, strategy, mask_out, eps, seed, plan_out, layers, qv_only, out);
        }
        if (*train) return cmd_train(config_path, train_out, out);
        if (*report) return cmd_report(run_dir, out);
        if (*inspect) return cmd_inspect(mask_path, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}

}  // namespace gem::cli
