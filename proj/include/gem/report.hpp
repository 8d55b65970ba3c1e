#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "gem/error.hpp"
#include "gem/model_store.hpp"

namespace gem {

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw DataError("not a number: '" + std::string(s) + "'");
    return v;
}

/// Minimal CSV table: header plus string cells. Fields never contain commas.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw DataError("CSV has no column '" + std::string(name) + "'");
    }

    std::string to_string() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += cells[i];
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }

    void write(const std::filesystem::path& p) const { detail::write_file(p, to_string()); }

    static CsvTable parse(const std::string& text) {
        CsvTable t;
        std::istringstream in(text);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::string cell;
            std::istringstream ls(line);
            while (std::getline(ls, cell, ',')) cells.push_back(cell);
            if (line.back() == ',') cells.emplace_back();
            if (first) {
                t.header = std::move(cells);
                first = false;
            } else {
                if (cells.size() != t.header.size()) throw DataError("CSV row width does not match header");
                t.rows.push_back(std::move(cells));
            }
        }
        if (first) throw DataError("empty CSV");
        return t;
    }

    static CsvTable read(const std::filesystem::path& p) { return parse(detail::read_file(p)); }
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
    std::size_t n = 0;
};

// Sequential sums in row order, so recomputation from the emitted rows is exact.
inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    r.n = xs.size();
    if (xs.empty()) return r;
    double s = 0.0;
    for (double x : xs) s += x;
    r.mean = s / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

inline constexpr std::string_view kCellMetrics[] = {"final_loss", "final_metric", "rel_change", "loss_red_proxy",
                                                    "captured_share"};

/// Aggregate tables derived from a run's cells.csv.
struct ReportTables {
    CsvTable aggregate;  // per (strategy, ratio): mean and std of each metric
    CsvTable fig2;       // seed-mean rel_change / loss_red_proxy, normalized to max 1 per ratio
    CsvTable table2;     // captured GWR share (% of total), mean and std
};

inline ReportTables build_report_tables(const CsvTable& cells) {
    const auto c_strategy = cells.column("strategy");
    const auto c_ratio = cells.column("ratio");

    // Group keys in first-appearance order.
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<const std::vector<std::string>*>> groups;
    for (const auto& row : cells.rows) {
        const auto key = std::make_pair(row[c_strategy], row[c_ratio]);
        if (!groups.count(key)) keys.push_back(key);
        groups[key].push_back(&row);
    }

    ReportTables t;
    t.aggregate.header = {"strategy", "ratio", "n_seeds"};
    for (auto m : kCellMetrics) {
        t.aggregate.header.emplace_back(std::string(m) + "_mean");
        t.aggregate.header.emplace_back(std::string(m) + "_std");
    }
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> means;
    for (const auto& key : keys) {
        const auto& rows = groups[key];
        std::vector<std::string> out{key.first, key.second, std::to_string(rows.size())};
        for (auto m : kCellMetrics) {
            const auto c = cells.column(m);
            std::vector<double> xs;
            for (const auto* r : rows)
                if (!(*r)[c].empty()) xs.push_back(parse_double((*r)[c]));
            if (xs.empty()) {
                out.emplace_back();
                out.emplace_back();
                continue;
            }
            const auto ms = mean_std(xs);
            means[key][std::string(m)] = ms.mean;
            out.push_back(format_double(ms.mean));
            out.push_back(format_double(ms.std));
        }
        t.aggregate.rows.push_back(std::move(out));
    }

    t.fig2.header = {"strategy", "ratio", "rel_change_mean", "loss_red_proxy_mean", "rel_change_norm",
                     "loss_red_proxy_norm"};
    std::map<std::string, std::pair<double, double>> panel_max;
    for (const auto& key : keys) {
        auto& pm = panel_max[key.second];
        if (means[key].count("rel_change")) pm.first = std::max(pm.first, means[key]["rel_change"]);
        if (means[key].count("loss_red_proxy")) pm.second = std::max(pm.second, means[key]["loss_red_proxy"]);
    }
    for (const auto& key : keys) {
        if (!means[key].count("rel_change")) continue;
        const double rc = means[key]["rel_change"];
        const double lr = means[key]["loss_red_proxy"];
        const auto& pm = panel_max[key.second];
        t.fig2.rows.push_back({key.first, key.second, format_double(rc), format_double(lr),
                               format_double(pm.first > 0.0 ? rc / pm.first : 0.0),
                               format_double(pm.second > 0.0 ? lr / pm.second : 0.0)});
    }

    t.table2.header = {"strategy", "ratio", "captured_gwr_pct_mean", "captured_gwr_pct_std"};
    const auto c_share = cells.column("captured_share");
    for (const auto& key : keys) {
        std::vector<double> xs;
        for (const auto* r : groups[key]) xs.push_back(100.0 * parse_double((*r)[c_share]));
        const auto ms = mean_std(xs);
        t.table2.rows.push_back({key.first, key.second, format_double(ms.mean), format_double(ms.std)});
    }
    return t;
}

inline ReportTables write_report_tables(const std::filesystem::path& run_dir) {
    const auto cells = CsvTable::read(run_dir / "cells.csv");
    auto t = build_report_tables(cells);
    t.aggregate.write(run_dir / "aggregate.csv");
    t.fig2.write(run_dir / "fig2.csv");
    t.table2.write(run_dir / "table2.csv");
    return t;
}

}  // namespace gem
