#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gem/error.hpp"
#include "gem/layer_mask.hpp"
#include "gem/model_store.hpp"

// Masked updates. Only indices in the mask are read or written, which is the
// same as zeroing the gradient outside the mask before the optimizer and
// gating weight decay by the mask: frozen weights and their moments never
// change, bit for bit.

namespace gem {

namespace detail {

inline void check_update_args(const LayerTensor& w, const LayerTensor& g, const LayerMask& mask) {
    if (w.shape != g.shape)
        throw DataError("layer '" + w.name + "': gradient shape " + shape_string(g.shape) +
                        " does not match weight shape " + shape_string(w.shape));
    for (auto i : mask.indices)
        if (i >= w.size())
            throw DataError("layer '" + w.name + "': mask index " + std::to_string(i) + " out of range");
}

}  // namespace detail

inline void masked_sgd_step(LayerTensor& weights, const LayerTensor& grads, const LayerMask& mask, double lr) {
    detail::check_update_args(weights, grads, mask);
    if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
    for (auto i : mask.indices) weights.values[i] -= lr * grads.values[i];
}

/// w <- w - lr * (g ⊙ M).
inline LayerTensor apply_masked_sgd(LayerTensor weights, const LayerTensor& grads, const LayerMask& mask, double lr) {
    masked_sgd_step(weights, grads, mask, lr);
    return weights;
}

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    AdamWState() = default;
    explicit AdamWState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// One AdamW step restricted to the mask, with decoupled weight decay.
inline void apply_masked_adamw(AdamWState& state, LayerTensor& weights, const LayerTensor& grads,
                               const LayerMask& mask, const AdamWHyper& h) {
    detail::check_update_args(weights, grads, mask);
    if (state.m.size() != weights.size() || state.v.size() != weights.size())
        throw DataError("layer '" + weights.name + "': optimizer state size does not match weights");
    if (!(h.lr > 0.0)) throw UsageError("learning rate must be positive");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    for (auto i : mask.indices) {
        const double g = grads.values[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        double w = weights.values[i];
        if (h.weight_decay != 0.0) w -= h.lr * h.weight_decay * w;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        weights.values[i] = w - h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
}

}  // namespace gem
