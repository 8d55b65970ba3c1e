#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/error.hpp"
#include "gem/numeric.hpp"
#include "gem/scoring.hpp"

namespace gem {

/// Scores normalized to a probability vector over one layer.
struct Distribution {
    std::vector<double> p;
    bool degenerate = false;  // all scores were zero; p is uniform
};

inline Distribution normalize_scores(const ScoreVector& scores) {
    const auto& s = scores.scores;
    if (s.empty()) throw DataError("layer '" + scores.layer_name + "': empty score vector");
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!(s[i] >= 0.0) || !std::isfinite(s[i]))
            throw DataError("layer '" + scores.layer_name + "': invalid score at flat index " + std::to_string(i));
    const double total = numeric::pairwise_sum(s);
    Distribution d;
    d.p.resize(s.size());
    if (total == 0.0) {
        d.degenerate = true;
        std::fill(d.p.begin(), d.p.end(), 1.0 / static_cast<double>(s.size()));
        return d;
    }
    for (std::size_t i = 0; i < s.size(); ++i) d.p[i] = s[i] / total;
    return d;
}

/// Shannon entropy in nats, with 0 ln 0 = 0. Result is clamped to [0, ln n]
/// to absorb last-ulp rounding.
inline double layer_entropy(std::span<const double> p) {
    if (p.empty()) throw DataError("entropy of an empty distribution");
    for (double x : p)
        if (!(x >= 0.0) || !std::isfinite(x)) throw DataError("entropy: distribution has a negative or non-finite entry");
    const double mass = numeric::pairwise_sum(p);
    if (std::fabs(mass - 1.0) > 1e-9) throw DataError("entropy: distribution sums to " + std::to_string(mass));
    numeric::CompensatedSum acc;
    for (double x : p)
        if (x > 0.0) acc.add(-x * std::log(x));
    return std::clamp(acc.value(), 0.0, std::log(static_cast<double>(p.size())));
}

struct LayerStats {
    double norm = 0.0;
    double entropy = 0.0;
    double importance = 0.0;
    bool degenerate = false;
};

/// alpha = ||rho||_2 * H(rho / sum rho).
inline LayerStats layer_importance(const ScoreVector& scores) {
    const auto dist = normalize_scores(scores);
    LayerStats st;
    st.norm = numeric::l2_norm(scores.scores);
    st.entropy = layer_entropy(dist.p);
    st.importance = st.norm * st.entropy;
    st.degenerate = dist.degenerate;
    return st;
}

struct LayerAllocation {
    std::string layer_name;
    std::uint64_t param_count = 0;
    double norm = 0.0;
    double entropy = 0.0;
    double importance = 0.0;
    double share = 0.0;
    std::uint64_t budget = 0;

    friend bool operator==(const LayerAllocation&, const LayerAllocation&) = default;
};

struct AllocationPlan {
    std::string allocator;
    double ratio = 0.0;
    std::uint64_t total_params = 0;
    std::uint64_t total_budget = 0;
    bool fallback_uniform = false;  // every importance was zero with a nonzero budget
    std::vector<LayerAllocation> layers;

    std::vector<std::uint64_t> budgets() const {
        std::vector<std::uint64_t> k;
        for (const auto& l : layers) k.push_back(l.budget);
        return k;
    }

    friend bool operator==(const AllocationPlan&, const AllocationPlan&) = default;
};

inline void to_json(nlohmann::json& j, const LayerAllocation& l) {
    j = {{"layer_name", l.layer_name}, {"param_count", l.param_count}, {"norm", l.norm},
         {"entropy", l.entropy},       {"importance", l.importance},   {"share", l.share},
         {"budget", l.budget}};
}

inline void from_json(const nlohmann::json& j, LayerAllocation& l) {
    j.at("layer_name").get_to(l.layer_name);
    j.at("param_count").get_to(l.param_count);
    j.at("norm").get_to(l.norm);
    j.at("entropy").get_to(l.entropy);
    j.at("importance").get_to(l.importance);
    j.at("share").get_to(l.share);
    j.at("budget").get_to(l.budget);
}

inline void to_json(nlohmann::json& j, const AllocationPlan& p) {
    j = {{"allocator", p.allocator},       {"ratio", p.ratio},
         {"total_params", p.total_params}, {"total_budget", p.total_budget},
         {"fallback_uniform", p.fallback_uniform}, {"layers", p.layers}};
}

inline void from_json(const nlohmann::json& j, AllocationPlan& p) {
    j.at("allocator").get_to(p.allocator);
    j.at("ratio").get_to(p.ratio);
    j.at("total_params").get_to(p.total_params);
    j.at("total_budget").get_to(p.total_budget);
    j.at("fallback_uniform").get_to(p.fallback_uniform);
    j.at("layers").get_to(p.layers);
}

namespace detail {

// r * N, snapped to the nearest integer when it is within rounding distance
// of one (so r = 8/300 with N = 300 yields exactly 8).
inline double scaled_budget(double r, std::uint64_t n) {
    const double x = r * static_cast<double>(n);
    const double nearest = std::nearbyint(x);
    if (std::fabs(x - nearest) <= 1e-9 * std::max(1.0, std::fabs(x))) return nearest;
    return x;
}

inline void require_ratio(double r) {
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("ratio must lie in (0, 1], got " + std::to_string(r));
}

// Largest-remainder rounding of base * w / sum(w) to integers summing to
// `total`, ties to the lower index. Caller guarantees sum(w) > 0 and
// floor(base) >= total >= sum of floors.
inline std::vector<std::uint64_t> largest_remainder(std::span<const double> weights, double base, std::uint64_t total) {
    const double wsum = numeric::pairwise_sum(weights);
    const std::size_t n = weights.size();
    std::vector<std::uint64_t> k(n, 0);
    std::vector<double> frac(n, 0.0);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = base * (weights[i] / wsum);
        const double fl = std::floor(q);
        k[i] = static_cast<std::uint64_t>(fl);
        frac[i] = q - fl;
        assigned += k[i];
    }
    // Guard against floors overshooting by rounding in base * share.
    while (assigned > total) {
        std::size_t worst = n;
        for (std::size_t i = 0; i < n; ++i)
            if (k[i] > 0 && (worst == n || frac[i] < frac[worst])) worst = i;
        --k[worst];
        frac[worst] += 1.0;
        --assigned;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    // Fractional parts sum to at least the residual, so it is below n.
    const std::uint64_t residual = total - assigned;
    for (std::uint64_t j = 0; j < residual; ++j) ++k[order[j % n]];
    return k;
}

}  // namespace detail

/// Integer apportionment of `budget` units in proportion to `weights`, with
/// per-entry caps. Entries whose share overflows their cap are pinned at the
/// cap and the rest is re-apportioned over the others until stable. `base`
/// is the unrounded total the first-pass quotas scale to (r*N for the
/// importance-driven allocator, the budget itself otherwise).
inline std::vector<std::uint64_t> apportion(std::span<const double> weights, std::span<const std::uint64_t> caps,
                                            double base, std::uint64_t budget) {
    const std::size_t n = weights.size();
    if (caps.size() != n) throw UsageError("apportion: weights and caps differ in length");
    const std::uint64_t capacity = std::accumulate(caps.begin(), caps.end(), std::uint64_t{0});
    if (budget > capacity) throw UsageError("budget exceeds total capacity");

    std::vector<std::uint64_t> k(n, 0);
    std::vector<bool> pinned(n, false);
    std::uint64_t remaining = budget;
    bool first = true;
    while (remaining > 0) {
        std::vector<std::size_t> open;
        std::vector<double> w;
        for (std::size_t i = 0; i < n; ++i)
            if (!pinned[i] && weights[i] > 0.0) {
                open.push_back(i);
                w.push_back(weights[i]);
            }
        if (open.empty()) {
            // Only zero-weight entries have room left: fill by spare capacity.
            for (std::size_t i = 0; i < n; ++i)
                if (!pinned[i] && caps[i] > k[i]) {
                    open.push_back(i);
                    w.push_back(static_cast<double>(caps[i] - k[i]));
                }
        }
        const auto extra = detail::largest_remainder(w, first ? base : static_cast<double>(remaining), remaining);
        first = false;

        std::uint64_t freed = 0;
        for (std::size_t j = 0; j < open.size(); ++j) {
            const std::size_t i = open[j];
            k[i] += extra[j];
            if (k[i] >= caps[i]) {
                freed += k[i] - caps[i];
                k[i] = caps[i];
                pinned[i] = true;
            }
        }
        remaining = freed;
    }
    return k;
}

/// Importance-proportional allocation: share = alpha / sum(alpha),
/// k = floor(r * N * share) plus largest-remainder redistribution, capped at
/// the layer size. Falls back to size-proportional shares (and flags the
/// plan) when every alpha is zero.
inline AllocationPlan allocate_budget(std::span<const double> importances, std::span<const std::uint64_t> layer_sizes,
                                      double r, std::uint64_t total_params) {
    detail::require_ratio(r);
    if (importances.size() != layer_sizes.size()) throw UsageError("importances and layer sizes differ in length");
    const std::uint64_t n_sum = std::accumulate(layer_sizes.begin(), layer_sizes.end(), std::uint64_t{0});
    if (n_sum != total_params)
        throw UsageError("N = " + std::to_string(total_params) + " but layer sizes sum to " + std::to_string(n_sum));
    for (double a : importances)
        if (!(a >= 0.0) || !std::isfinite(a)) throw UsageError("layer importance must be finite and nonnegative");

    AllocationPlan plan;
    plan.allocator = "importance";
    plan.ratio = r;
    plan.total_params = total_params;
    const double base = detail::scaled_budget(r, total_params);
    plan.total_budget = static_cast<std::uint64_t>(std::floor(base));
    if (plan.total_budget > total_params) throw UsageError("budget exceeds total parameter count");

    const double alpha_sum = numeric::pairwise_sum(importances);
    std::vector<double> weights(importances.begin(), importances.end());
    double weight_sum = alpha_sum;
    double quota_base = base;
    if (alpha_sum == 0.0) {
        for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = static_cast<double>(layer_sizes[i]);
        weight_sum = static_cast<double>(total_params);
        quota_base = static_cast<double>(plan.total_budget);
        plan.fallback_uniform = plan.total_budget > 0;
    }

    std::vector<std::uint64_t> k(weights.size(), 0);
    if (plan.total_budget > 0) k = apportion(weights, layer_sizes, quota_base, plan.total_budget);

    for (std::size_t i = 0; i < weights.size(); ++i) {
        LayerAllocation la;
        la.param_count = layer_sizes[i];
        la.importance = importances[i];
        la.share = weight_sum > 0.0 ? weights[i] / weight_sum : 0.0;
        la.budget = k[i];
        plan.layers.push_back(la);
    }
    return plan;
}

enum class UniformMode {
    proportional,  // k proportional to layer size
    equal          // same count per layer, capped at layer size
};

/// Baseline allocator that ignores the scores.
inline AllocationPlan allocate_uniform(std::span<const std::uint64_t> layer_sizes, double r, std::uint64_t total_params,
                                       UniformMode mode = UniformMode::proportional) {
    detail::require_ratio(r);
    const std::uint64_t n_sum = std::accumulate(layer_sizes.begin(), layer_sizes.end(), std::uint64_t{0});
    if (n_sum != total_params)
        throw UsageError("N = " + std::to_string(total_params) + " but layer sizes sum to " + std::to_string(n_sum));

    AllocationPlan plan;
    plan.allocator = mode == UniformMode::proportional ? "uniform" : "uniform_equal";
    plan.ratio = r;
    plan.total_params = total_params;
    plan.total_budget = static_cast<std::uint64_t>(std::floor(detail::scaled_budget(r, total_params)));

    std::vector<double> weights(layer_sizes.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
        weights[i] = mode == UniformMode::proportional ? static_cast<double>(layer_sizes[i]) : 1.0;
    const double wsum = numeric::pairwise_sum(weights);

    std::vector<std::uint64_t> k(weights.size(), 0);
    if (plan.total_budget > 0)
        k = apportion(weights, layer_sizes, static_cast<double>(plan.total_budget), plan.total_budget);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        LayerAllocation la;
        la.param_count = layer_sizes[i];
        la.share = weights[i] / wsum;
        la.budget = k[i];
        plan.layers.push_back(la);
    }
    return plan;
}

}  // namespace gem
