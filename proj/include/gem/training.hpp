#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/mask_engine.hpp"
#include "gem/model_store.hpp"
#include "gem/optimizer.hpp"
#include "gem/random.hpp"
#include "gem/scoring.hpp"
#include "gem/tasks.hpp"
#include "gem/toy_models.hpp"

namespace gem {

enum class OptimizerKind { sgd, adamw };

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adamw") return OptimizerKind::adamw;
    throw UsageError("unknown optimizer '" + s + "'");
}
inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }

/// Constant learning rate; batch order is a fixed shuffle per (seed, epoch).
struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adamw;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t batch_size = 32;

    AdamWHyper adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }

    void validate() const {
        if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
        if (batch_size == 0) throw UsageError("batch size must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw UsageError("optimizer eps must be positive");
    }
};

struct TrainRecord {
    std::uint64_t epoch = 0;
    double loss = 0.0;            // mean train loss after the epoch
    double metric = 0.0;          // eval accuracy or eval mse
    double rel_change = 0.0;      // ||(w_t - w_0) / w_0|| over selected parameters
    double loss_red_proxy = 0.0;  // |g_0 . (w_t - w_0)| over selected parameters
    double captured_share = 0.0;  // captured GWR share of the mask

    friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

struct TrainResult {
    ModelSnapshot model;
    std::vector<TrainRecord> records;
};

/// Fixed per-(seed, epoch) permutation of [0, n).
inline std::vector<std::uint64_t> epoch_order(std::uint64_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::uint64_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::uint64_t{0});
    Rng rng(Rng::derive(seed, 0xE90C0000ULL + epoch));
    for (std::uint64_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

inline std::vector<Dataset> make_batches(const Dataset& data, std::uint64_t batch_size, std::uint64_t seed,
                                         std::uint64_t epoch) {
    const auto order = epoch_order(data.n, seed, epoch);
    std::vector<Dataset> out;
    for (std::uint64_t start = 0; start < data.n; start += batch_size) {
        const auto end = std::min(data.n, start + batch_size);
        out.push_back(data.subset({order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end)}));
    }
    return out;
}

/// Diagnostics of w_t against the masking-time reference (w_0, g_0).
struct ShiftMetrics {
    double rel_change = 0.0;
    double loss_red_proxy = 0.0;
};

inline ShiftMetrics shift_metrics(const ModelSnapshot& w0, const GradientSnapshot& g0, const ModelSnapshot& wt,
                                  const MaskSet& masks, double eps) {
    double sq = 0.0;
    double dot = 0.0;
    for (const auto& m : masks.layers) {
        const auto* a = w0.find(m.layer_name);
        const auto* b = wt.find(m.layer_name);
        const auto* g = g0.find(m.layer_name);
        if (!a || !b || !g) throw DataError("no reference tensors for masked layer '" + m.layer_name + "'");
        const double r = relative_weight_change(*a, *b, m, eps);
        sq += r * r;
        dot += first_order_loss_change(*g, *a, *b, m);
    }
    return {std::sqrt(sq), std::fabs(dot)};
}

/// Fine-tune only the masked parameters. Layers without a mask stay frozen.
/// `g0` and `eps` feed the per-epoch diagnostics.
inline TrainResult train_masked(const ToyModelSpec& spec, const ModelSnapshot& model, const TaskData& task,
                                const MaskSet& masks, const OptimizerConfig& opt, std::uint64_t epochs,
                                std::uint64_t seed, const GradientSnapshot& g0, double eps = kDefaultEps) {
    opt.validate();
    std::vector<std::size_t> layer_idx;
    for (const auto& m : masks.layers) {
        const auto i = model.index_of(m.layer_name);
        if (!i) throw DataError("mask layer '" + m.layer_name + "' is not in the model");
        if (model.layer(*i).shape != m.shape) throw DataError("mask layer '" + m.layer_name + "' shape mismatch");
        m.validate();
        layer_idx.push_back(*i);
    }

    TrainResult res{model, {}};
    if (epochs == 0) return res;

    const double share = mask_captured_share(model, g0, masks, eps);
    std::vector<AdamWState> states;
    for (auto i : layer_idx) states.emplace_back(model.layer(i).size());

    for (std::uint64_t epoch = 1; epoch <= epochs; ++epoch) {
        for (const auto& batch : make_batches(task.train, opt.batch_size, seed, epoch)) {
            const auto fb = forward_backward(spec, res.model, batch, GradScope::all);
            for (std::size_t k = 0; k < masks.layers.size(); ++k) {
                auto& w = res.model.layer(layer_idx[k]);
                const auto& g = fb.grads.layers[layer_idx[k]];
                if (opt.kind == OptimizerKind::sgd)
                    masked_sgd_step(w, g, masks.layers[k], opt.lr);
                else
                    apply_masked_adamw(states[k], w, g, masks.layers[k], opt.adamw());
            }
        }
        TrainRecord rec;
        rec.epoch = epoch;
        rec.loss = evaluate(spec, res.model, task.train).loss;
        rec.metric = evaluate(spec, res.model, task.eval).metric;
        const auto sm = shift_metrics(model, g0, res.model, masks, eps);
        rec.rel_change = sm.rel_change;
        rec.loss_red_proxy = sm.loss_red_proxy;
        rec.captured_share = share;
        res.records.push_back(rec);
    }
    return res;
}

/// Train every layer; produces the "pre-trained" W_0 on a source task.
inline ModelSnapshot pretrain(const ToyModelSpec& spec, const ModelSnapshot& model, const Dataset& data,
                              const OptimizerConfig& opt, std::uint64_t epochs, std::uint64_t seed) {
    opt.validate();
    ModelSnapshot m = model;
    std::vector<LayerMask> full;
    std::vector<AdamWState> states;
    for (const auto& l : m.layers()) {
        full.push_back(full_mask(l));
        states.emplace_back(l.size());
    }
    for (std::uint64_t epoch = 1; epoch <= epochs; ++epoch) {
        for (const auto& batch : make_batches(data, opt.batch_size, seed, epoch)) {
            const auto fb = forward_backward(spec, m, batch, GradScope::all);
            for (std::size_t i = 0; i < m.layer_count(); ++i) {
                if (opt.kind == OptimizerKind::sgd)
                    masked_sgd_step(m.layer(i), fb.grads.layers[i], full[i], opt.lr);
                else
                    apply_masked_adamw(states[i], m.layer(i), fb.grads.layers[i], full[i], opt.adamw());
            }
        }
    }
    return m;
}

enum class GradientSource {
    epoch,  // mean-loss gradient over the whole training split
    batch   // a single shuffled minibatch
};

inline GradientSource parse_gradient_source(const std::string& s) {
    if (s == "epoch") return GradientSource::epoch;
    if (s == "batch") return GradientSource::batch;
    throw UsageError("unknown gradient source '" + s + "'");
}
inline const char* to_string(GradientSource s) { return s == GradientSource::epoch ? "epoch" : "batch"; }

/// g_0 = grad L(W_0) for the tunable layers. Epoch mode accumulates
/// size-weighted minibatch gradients over one pass, which equals the
/// full-split mean-loss gradient.
inline GradientSnapshot accumulate_gradient(const ToyModelSpec& spec, const ModelSnapshot& w0, const Dataset& data,
                                            GradientSource source, std::uint64_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw UsageError("batch size must be positive");
    const auto batches = make_batches(data, batch_size, seed, 0);
    if (source == GradientSource::batch) return forward_backward(spec, w0, batches.front()).grads;

    GradientSnapshot acc;
    for (const auto& b : batches) {
        auto fb = forward_backward(spec, w0, b);
        const double weight = static_cast<double>(b.n) / static_cast<double>(data.n);
        if (acc.layers.empty()) {
            acc = std::move(fb.grads);
            for (auto& l : acc.layers)
                for (auto& v : l.values) v *= weight;
            continue;
        }
        for (std::size_t i = 0; i < acc.layers.size(); ++i)
            for (std::size_t j = 0; j < acc.layers[i].size(); ++j)
                acc.layers[i].values[j] += weight * fb.grads.layers[i].values[j];
    }
    return acc;
}

}  // namespace gem
