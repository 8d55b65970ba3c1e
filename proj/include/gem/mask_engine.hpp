#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <regex>
#include <string>
#include <vector>

#include "gem/allocation.hpp"
#include "gem/error.hpp"
#include "gem/layer_mask.hpp"
#include "gem/mask_set.hpp"
#include "gem/model_store.hpp"
#include "gem/optimizer.hpp"
#include "gem/random.hpp"
#include "gem/scoring.hpp"
#include "gem/topk.hpp"

namespace gem {

enum class Scorer {
    gwr,             // |g| / max(|w|, eps)
    grad_magnitude,  // |g|
    random           // uniform sampling, no scores
};

enum class Allocator {
    importance,     // alpha = ||rho|| * H(p)
    norm_only,      // alpha = ||rho||
    entropy_only,   // alpha = H(p)
    uniform,        // size-proportional
    uniform_equal,  // equal count per layer
    global_top_k    // one top-B selection across all layers
};

inline const char* to_string(Allocator a) {
    switch (a) {
        case Allocator::importance: return "importance";
        case Allocator::norm_only: return "norm_only";
        case Allocator::entropy_only: return "entropy_only";
        case Allocator::uniform: return "uniform";
        case Allocator::uniform_equal: return "uniform_equal";
        case Allocator::global_top_k: return "global_top_k";
    }
    return "?";
}

/// A scorer/allocator pairing plus its parameters.
struct MaskRecipe {
    std::string name;
    Scorer scorer = Scorer::gwr;
    Allocator allocator = Allocator::importance;
    double ratio = 0.0;
    double eps = kDefaultEps;
    std::uint64_t seed = 0;
    std::string gradient_source;
};

namespace detail {

inline std::vector<std::uint64_t> sample_without_replacement(std::uint64_t n, std::uint64_t k, std::uint64_t seed) {
    // Partial Fisher-Yates over an index table.
    std::vector<std::uint64_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::uint64_t{0});
    Rng rng(seed);
    for (std::uint64_t i = 0; i < k; ++i) {
        const std::uint64_t j = i + rng.below(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct ScoredEntry {
    double score;
    std::size_t layer;
    std::uint64_t index;
};

}  // namespace detail

/// Score every tunable layer, allocate the
/// budget floor(r*N) across layers, then keep the top-k_l scores per layer.
/// Deterministic in its inputs (including the seed for random masks).
inline MaskSet build_masks(const ModelSnapshot& w0, const GradientSnapshot& g0, const MaskRecipe& recipe) {
    detail::require_ratio(recipe.ratio);
    detail::require_eps(recipe.eps);
    const auto paired = pair_layers(w0, g0);
    if (paired.empty()) throw DataError("no tunable layers to mask");

    std::vector<ScoreVector> scores;
    std::vector<LayerStats> stats(paired.size());
    std::vector<std::uint64_t> sizes;
    for (std::size_t l = 0; l < paired.size(); ++l) {
        const auto& [w, g] = paired[l];
        sizes.push_back(w->size());
        if (recipe.scorer == Scorer::random) continue;
        scores.push_back(recipe.scorer == Scorer::gwr ? compute_gwr(*w, *g, recipe.eps) : compute_grad_magnitude(*g));
        stats[l] = layer_importance(scores.back());
    }
    const std::uint64_t n_total = w0.total_params();

    AllocationPlan plan;
    std::vector<std::vector<std::uint64_t>> picked(paired.size());
    switch (recipe.allocator) {
        case Allocator::importance:
        case Allocator::norm_only:
        case Allocator::entropy_only: {
            if (recipe.scorer == Scorer::random) throw UsageError("importance allocators need scores");
            std::vector<double> alpha;
            for (const auto& st : stats)
                alpha.push_back(recipe.allocator == Allocator::importance ? st.importance
                                : recipe.allocator == Allocator::norm_only ? st.norm
                                                                           : st.entropy);
            plan = allocate_budget(alpha, sizes, recipe.ratio, n_total);
            break;
        }
        case Allocator::uniform:
        case Allocator::uniform_equal:
            plan = allocate_uniform(sizes, recipe.ratio, n_total,
                                    recipe.allocator == Allocator::uniform ? UniformMode::proportional
                                                                           : UniformMode::equal);
            break;
        case Allocator::global_top_k: {
            if (recipe.scorer == Scorer::random) throw UsageError("global top-k needs scores");
            plan.ratio = recipe.ratio;
            plan.total_params = n_total;
            plan.total_budget = static_cast<std::uint64_t>(std::floor(detail::scaled_budget(recipe.ratio, n_total)));
            std::vector<detail::ScoredEntry> all;
            all.reserve(n_total);
            for (std::size_t l = 0; l < scores.size(); ++l)
                for (std::uint64_t i = 0; i < scores[l].size(); ++i) all.push_back({scores[l].scores[i], l, i});
            const auto before = [](const detail::ScoredEntry& a, const detail::ScoredEntry& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.layer != b.layer) return a.layer < b.layer;
                return a.index < b.index;
            };
            const auto b = static_cast<std::ptrdiff_t>(plan.total_budget);
            if (b > 0 && b < static_cast<std::ptrdiff_t>(all.size()))
                std::nth_element(all.begin(), all.begin() + b - 1, all.end(), before);
            for (std::ptrdiff_t e = 0; e < b; ++e) picked[all[e].layer].push_back(all[e].index);
            for (std::size_t l = 0; l < paired.size(); ++l) {
                std::sort(picked[l].begin(), picked[l].end());
                LayerAllocation la;
                la.param_count = sizes[l];
                la.budget = picked[l].size();
                la.share = plan.total_budget ? static_cast<double>(la.budget) / static_cast<double>(plan.total_budget)
                                             : 0.0;
                plan.layers.push_back(la);
            }
            break;
        }
    }
    plan.allocator = to_string(recipe.allocator);

    MaskSet ms;
    for (std::size_t l = 0; l < paired.size(); ++l) {
        const auto& w = *paired[l].weights;
        auto& la = plan.layers[l];
        la.layer_name = w.name;
        la.norm = stats[l].norm;
        la.entropy = stats[l].entropy;
        if (recipe.allocator != Allocator::norm_only && recipe.allocator != Allocator::entropy_only)
            la.importance = stats[l].importance;

        LayerMask m{w.name, w.shape, {}};
        if (recipe.allocator == Allocator::global_top_k)
            m.indices = std::move(picked[l]);
        else if (recipe.scorer == Scorer::random)
            m.indices = detail::sample_without_replacement(w.size(), la.budget, Rng::derive(recipe.seed, l));
        else
            m.indices = top_k_indices(scores[l].scores, la.budget);
        ms.layers.push_back(std::move(m));
    }
    ms.provenance = Provenance{recipe.ratio, recipe.name, recipe.eps, recipe.seed, recipe.gradient_source, std::move(plan)};
    ms.validate();
    return ms;
}

/// Captured GWR share of a mask set, scored against (w0, g0).
inline double mask_captured_share(const ModelSnapshot& w0, const GradientSnapshot& g0, const MaskSet& ms,
                                  double eps = kDefaultEps) {
    std::vector<ScoreVector> scores;
    std::vector<LayerMask> masks;
    for (const auto& [w, g] : pair_layers(w0, g0)) {
        scores.push_back(compute_gwr(*w, *g, eps));
        const auto* m = ms.find(w->name);
        masks.push_back(m ? *m : LayerMask{w->name, w->shape, {}});
    }
    return captured_share(scores, masks);
}

// Query/value projections, the default fine-tuning scope for attention models.
inline const std::vector<std::string> kDefaultTunablePatterns{"q_proj", "v_proj", "query", "value"};

/// Mark a layer tunable iff its name matches (regex search) any pattern.
/// Returns the number of tunable layers.
inline std::size_t apply_tunable_patterns(ModelSnapshot& model, const std::vector<std::string>& patterns) {
    std::vector<std::regex> res;
    for (const auto& p : patterns) {
        try {
            res.emplace_back(p);
        } catch (const std::regex_error& e) {
            throw UsageError("bad layer pattern '" + p + "': " + e.what());
        }
    }
    std::size_t n = 0;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        bool hit = false;
        for (const auto& re : res) hit = hit || std::regex_search(model.layer(i).name, re);
        model.set_tunable(i, hit);
        n += hit;
    }
    return n;
}

}  // namespace gem
