#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/layer_mask.hpp"
#include "gem/model_store.hpp"
#include "gem/numeric.hpp"

namespace gem {

inline constexpr double kDefaultEps = 1e-12;

/// Per-parameter scores for one layer, parallel to its flat index space.
struct ScoreVector {
    std::string layer_name;
    std::vector<double> scores;

    std::size_t size() const { return scores.size(); }
    friend bool operator==(const ScoreVector&, const ScoreVector&) = default;
};

namespace detail {

inline void require_same_shape(const LayerTensor& a, const LayerTensor& b) {
    if (a.shape != b.shape)
        throw DataError("layer '" + a.name + "': shape " + shape_string(a.shape) + " does not match '" + b.name +
                        "' shape " + shape_string(b.shape));
}

inline void require_eps(double eps) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw UsageError("eps must be a finite positive number");
}

inline void require_mask_fits(const LayerMask& mask, std::size_t n, const std::string& layer) {
    for (auto i : mask.indices)
        if (i >= n)
            throw DataError("mask index " + std::to_string(i) + " out of range for layer '" + layer + "' with " +
                            std::to_string(n) + " parameters");
}

}  // namespace detail

/// Gradient-to-weight ratio: |g| / max(|w|, eps).
inline ScoreVector compute_gwr(const LayerTensor& weights, const LayerTensor& grads, double eps = kDefaultEps) {
    detail::require_same_shape(weights, grads);
    detail::require_eps(eps);
    ScoreVector out{weights.name, std::vector<double>(weights.size())};
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double s = std::fabs(grads.values[i]) / std::max(std::fabs(weights.values[i]), eps);
        if (!std::isfinite(s))
            throw DataError("layer '" + weights.name + "': non-finite score at flat index " + std::to_string(i));
        out.scores[i] = s;
    }
    return out;
}

// |g|, the score used by top-gradient masking.
inline ScoreVector compute_grad_magnitude(const LayerTensor& grads) {
    ScoreVector out{grads.name, std::vector<double>(grads.size())};
    for (std::size_t i = 0; i < grads.size(); ++i) out.scores[i] = std::fabs(grads.values[i]);
    return out;
}

/// L2 norm of (wt - w0) / max(|w0|, eps) over the selected indices.
inline double relative_weight_change(const LayerTensor& w0, const LayerTensor& wt, const LayerMask& selected,
                                     double eps = kDefaultEps) {
    detail::require_same_shape(w0, wt);
    detail::require_eps(eps);
    detail::require_mask_fits(selected, w0.size(), w0.name);
    const auto& idx = selected.indices;
    const double sq = numeric::pairwise_sum_of(idx.size(), [&](std::size_t k) {
        const auto i = idx[k];
        const double r = (wt.values[i] - w0.values[i]) / std::max(std::fabs(w0.values[i]), eps);
        return r * r;
    });
    return std::sqrt(sq);
}

// Signed first-order loss change g0 . (wt - w0) over the selected indices;
// summed across layers before taking |.| for the global proxy.
inline double first_order_loss_change(const LayerTensor& grad0, const LayerTensor& w0, const LayerTensor& wt,
                                      const LayerMask& selected) {
    detail::require_same_shape(w0, wt);
    detail::require_same_shape(w0, grad0);
    detail::require_mask_fits(selected, w0.size(), w0.name);
    const auto& idx = selected.indices;
    return numeric::pairwise_sum_of(idx.size(), [&](std::size_t k) {
        const auto i = idx[k];
        return grad0.values[i] * (wt.values[i] - w0.values[i]);
    });
}

/// |sum over selected of g0[i] * (wt[i] - w0[i])|.
inline double loss_reduction_proxy(const LayerTensor& grad0, const LayerTensor& w0, const LayerTensor& wt,
                                   const LayerMask& selected) {
    return std::fabs(first_order_loss_change(grad0, w0, wt, selected));
}

/// Fraction of the total score mass covered by the masks. Layers are paired
/// positionally; returns 0 when the total is 0.
inline double captured_share(std::span<const ScoreVector> scores, std::span<const LayerMask> masks) {
    if (scores.size() != masks.size())
        throw DataError("captured_share: " + std::to_string(scores.size()) + " score vectors but " +
                        std::to_string(masks.size()) + " masks");
    double captured = 0.0;
    double total = 0.0;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        const auto& s = scores[l].scores;
        const auto& idx = masks[l].indices;
        detail::require_mask_fits(masks[l], s.size(), scores[l].layer_name);
        captured += numeric::pairwise_sum_of(idx.size(), [&](std::size_t k) { return s[idx[k]]; });
        total += numeric::pairwise_sum(s);
    }
    if (total == 0.0) return 0.0;
    return captured / total;
}

}  // namespace gem
