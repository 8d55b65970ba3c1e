#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gem/error.hpp"
#include "gem/mask_engine.hpp"

namespace gem {

/// A named masking strategy; the names are the stable CLI vocabulary.
struct StrategySpec {
    std::string name = "gem";
    double ratio = 0.0;
    double eps = kDefaultEps;
    std::uint64_t seed = 0;  // random only
};

struct StrategyInfo {
    std::string_view name;
    Scorer scorer;
    Allocator allocator;
    std::string_view description;
};

inline constexpr std::array<StrategyInfo, 8> kStrategies{{
    {"gem", Scorer::gwr, Allocator::importance, "GWR scores, norm x entropy layer allocation"},
    {"random", Scorer::random, Allocator::uniform, "uniform random selection, size-proportional per layer"},
    {"top_gradient", Scorer::grad_magnitude, Allocator::uniform, "largest |g|, size-proportional per layer"},
    {"gwr_uniform", Scorer::gwr, Allocator::uniform, "GWR scores, size-proportional per layer"},
    {"gwr_norm_only", Scorer::gwr, Allocator::norm_only, "GWR scores, allocation by ||rho|| only"},
    {"gwr_entropy_only", Scorer::gwr, Allocator::entropy_only, "GWR scores, allocation by entropy only"},
    {"top_gradient_global", Scorer::grad_magnitude, Allocator::global_top_k, "largest |g| across all layers"},
    {"gwr_uniform_equal", Scorer::gwr, Allocator::uniform_equal, "GWR scores, equal count per layer"},
}};

inline const StrategyInfo& strategy_info(std::string_view name) {
    for (const auto& s : kStrategies)
        if (s.name == name) return s;
    throw UsageError("unknown strategy '" + std::string(name) + "'");
}

inline std::vector<std::string> strategy_names() {
    std::vector<std::string> out;
    for (const auto& s : kStrategies) out.emplace_back(s.name);
    return out;
}

inline MaskRecipe recipe_for(const StrategySpec& spec, std::string gradient_source = {}) {
    const auto& info = strategy_info(spec.name);
    detail::require_ratio(spec.ratio);
    return MaskRecipe{spec.name,
                      info.scorer,
                      info.allocator,
                      spec.ratio,
                      spec.eps,
                      info.scorer == Scorer::random ? spec.seed : 0,
                      std::move(gradient_source)};
}

inline MaskSet make_mask(const StrategySpec& spec, const ModelSnapshot& w0, const GradientSnapshot& g0,
                         std::string gradient_source = {}) {
    return build_masks(w0, g0, recipe_for(spec, std::move(gradient_source)));
}

}  // namespace gem
