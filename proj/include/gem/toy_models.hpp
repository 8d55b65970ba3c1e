#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/model_store.hpp"
#include "gem/random.hpp"
#include "gem/tasks.hpp"

namespace gem {

enum class ModelKind { mlp, attn1 };
enum class Activation { tanh, relu };
enum class LossKind { cross_entropy, mse };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "mlp") return ModelKind::mlp;
    if (s == "attn1") return ModelKind::attn1;
    throw UsageError("unknown model kind '" + s + "'");
}
inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw UsageError("unknown activation '" + s + "'");
}
inline LossKind parse_loss(const std::string& s) {
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "mse") return LossKind::mse;
    throw UsageError("unknown loss '" + s + "'");
}
inline const char* to_string(ModelKind k) { return k == ModelKind::mlp ? "mlp" : "attn1"; }
inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }
inline const char* to_string(LossKind l) { return l == LossKind::cross_entropy ? "cross_entropy" : "mse"; }

/// Architecture of a toy model.
///
/// mlp:   dims = [in, hidden..., out]; layers fc<i>.weight [out, in] and
///        fc<i>.bias [out] (1-based), all tunable.
/// attn1: input is seq_len tokens of width d_model; single-head
///        self-attention with q_proj/k_proj/v_proj/o_proj [d_model, d_model]
///        (no bias), mean pooling over tokens, then head.weight/head.bias.
///        Only q_proj and v_proj are tunable by default.
struct ToyModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::vector<std::uint64_t> dims{16, 32, 2};
    Activation activation = Activation::tanh;
    bool bias = true;
    std::uint64_t d_model = 8;
    std::uint64_t seq_len = 2;
    std::uint64_t n_outputs = 2;
    LossKind loss = LossKind::cross_entropy;
    std::uint64_t seed = 0;

    std::uint64_t input_dim() const { return kind == ModelKind::mlp ? dims.front() : seq_len * d_model; }
    std::uint64_t output_dim() const { return kind == ModelKind::mlp ? dims.back() : n_outputs; }

    void validate() const {
        if (kind == ModelKind::mlp) {
            if (dims.size() < 2) throw UsageError("mlp needs at least input and output dimensions");
            for (auto d : dims)
                if (d == 0) throw UsageError("mlp dimensions must be positive");
        } else {
            if (d_model == 0 || seq_len == 0 || n_outputs == 0)
                throw UsageError("attn1 dimensions must be positive");
        }
        if (loss == LossKind::cross_entropy && output_dim() < 2)
            throw UsageError("cross-entropy needs at least 2 outputs");
    }
};

/// Deterministic initialization: weights ~ N(0, 1/fan_in), biases ~ N(0, 0.1^2).
inline ModelSnapshot init_model(const ToyModelSpec& spec) {
    spec.validate();
    Rng rng(Rng::derive(spec.seed, 0x1417));
    ModelSnapshot m;
    auto dense = [&](const std::string& name, std::uint64_t out, std::uint64_t in, bool tunable) {
        std::vector<double> v(out * in);
        const double sd = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& x : v) x = rng.normal(0.0, sd);
        m.add_layer(LayerTensor(name, {out, in}, std::move(v)), tunable);
    };
    auto bias = [&](const std::string& name, std::uint64_t out, bool tunable) {
        std::vector<double> v(out);
        for (auto& x : v) x = rng.normal(0.0, 0.1);
        m.add_layer(LayerTensor(name, {out}, std::move(v)), tunable);
    };
    if (spec.kind == ModelKind::mlp) {
        for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
            const std::string p = "fc" + std::to_string(l + 1);
            dense(p + ".weight", spec.dims[l + 1], spec.dims[l], true);
            if (spec.bias) bias(p + ".bias", spec.dims[l + 1], true);
        }
    } else {
        const auto d = spec.d_model;
        dense("q_proj", d, d, true);
        dense("k_proj", d, d, false);
        dense("v_proj", d, d, true);
        dense("o_proj", d, d, false);
        dense("head.weight", spec.n_outputs, d, false);
        bias("head.bias", spec.n_outputs, false);
    }
    return m;
}

struct LossAndGrads {
    double loss = 0.0;
    GradientSnapshot grads;
};

struct EvalResult {
    double loss = 0.0;
    double metric = 0.0;  // accuracy for classification, mse for regression
};

namespace detail {

inline void check_batch(const ToyModelSpec& spec, const Dataset& batch) {
    if (batch.input_dim != spec.input_dim())
        throw DataError("batch input width " + std::to_string(batch.input_dim) + " does not match model input " +
                        std::to_string(spec.input_dim()));
    if (batch.n == 0) throw DataError("empty batch");
    if (batch.classification) {
        if (spec.loss != LossKind::cross_entropy) throw DataError("classification batch needs cross-entropy loss");
        for (auto c : batch.labels)
            if (c >= spec.output_dim()) throw DataError("label out of range for model outputs");
    } else {
        if (spec.loss != LossKind::mse) throw DataError("regression batch needs mse loss");
        if (batch.output_dim != spec.output_dim())
            throw DataError("batch target width does not match model outputs");
    }
}

inline const LayerTensor& need(const ModelSnapshot& m, const std::string& name) {
    const auto* t = m.find(name);
    if (!t) throw DataError("model is missing layer '" + name + "'");
    return *t;
}

// Loss for one sample's output vector; writes dLoss/dOutput (unscaled by 1/n).
inline double output_loss(LossKind kind, const std::vector<double>& out, const Dataset& b, std::uint64_t s,
                          std::vector<double>* dout, bool* correct) {
    const std::size_t k = out.size();
    if (kind == LossKind::cross_entropy) {
        const double mx = *std::max_element(out.begin(), out.end());
        double z = 0.0;
        for (double o : out) z += std::exp(o - mx);
        const double lse = mx + std::log(z);
        const auto label = b.labels[s];
        if (dout) {
            dout->resize(k);
            for (std::size_t c = 0; c < k; ++c) (*dout)[c] = std::exp(out[c] - lse) - (c == label ? 1.0 : 0.0);
        }
        if (correct) {
            const auto arg = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
            *correct = arg == label;
        }
        return lse - out[label];
    }
    double l = 0.0;
    if (dout) dout->resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const double r = out[c] - b.targets[s * k + c];
        l += r * r;
        if (dout) (*dout)[c] = 2.0 * r;
    }
    return l;
}

// Forward (and optionally backward) over a batch. grads, when non-null, is
// filled with one tensor per model layer in model order.
inline EvalResult run_mlp(const ToyModelSpec& spec, const ModelSnapshot& m, const Dataset& b,
                          std::vector<LayerTensor>* grads) {
    const std::size_t L = spec.dims.size() - 1;
    std::vector<const LayerTensor*> W(L), B(L, nullptr);
    std::vector<LayerTensor*> dW(L, nullptr), dB(L, nullptr);
    for (std::size_t l = 0; l < L; ++l) {
        const std::string p = "fc" + std::to_string(l + 1);
        W[l] = &need(m, p + ".weight");
        if (W[l]->shape != Shape{spec.dims[l + 1], spec.dims[l]}) throw DataError("layer '" + W[l]->name + "' has wrong shape");
        if (spec.bias) B[l] = &need(m, p + ".bias");
    }
    if (grads) {
        grads->clear();
        for (const auto& t : m.layers()) grads->emplace_back(t.name, t.shape);
        for (std::size_t l = 0; l < L; ++l) {
            dW[l] = &(*grads)[*m.index_of(W[l]->name)];
            if (B[l]) dB[l] = &(*grads)[*m.index_of(B[l]->name)];
        }
    }

    const double inv_n = 1.0 / static_cast<double>(b.n);
    EvalResult res;
    std::uint64_t hits = 0;
    std::vector<std::vector<double>> acts(L + 1), pre(L + 1);
    std::vector<double> dout, delta, prev_delta;
    for (std::uint64_t s = 0; s < b.n; ++s) {
        acts[0].assign(b.row(s), b.row(s) + b.input_dim);
        for (std::size_t l = 0; l < L; ++l) {
            const auto in = spec.dims[l], out = spec.dims[l + 1];
            pre[l + 1].assign(out, 0.0);
            for (std::uint64_t o = 0; o < out; ++o) {
                double z = B[l] ? B[l]->values[o] : 0.0;
                const double* wr = W[l]->values.data() + o * in;
                for (std::uint64_t i = 0; i < in; ++i) z += wr[i] * acts[l][i];
                pre[l + 1][o] = z;
            }
            acts[l + 1] = pre[l + 1];
            if (l + 1 < L)
                for (auto& a : acts[l + 1]) a = spec.activation == Activation::tanh ? std::tanh(a) : std::max(a, 0.0);
        }
        bool correct = false;
        res.loss += output_loss(spec.loss, acts[L], b, s, grads ? &dout : nullptr, &correct);
        if (b.classification && correct) ++hits;
        if (!b.classification) res.metric += output_loss(LossKind::mse, acts[L], b, s, nullptr, nullptr);
        if (!grads) continue;

        delta = dout;
        for (auto& x : delta) x *= inv_n;
        for (std::size_t l = L; l-- > 0;) {
            const auto in = spec.dims[l], out = spec.dims[l + 1];
            for (std::uint64_t o = 0; o < out; ++o) {
                double* gr = dW[l]->values.data() + o * in;
                for (std::uint64_t i = 0; i < in; ++i) gr[i] += delta[o] * acts[l][i];
                if (dB[l]) dB[l]->values[o] += delta[o];
            }
            if (l == 0) break;
            prev_delta.assign(in, 0.0);
            for (std::uint64_t o = 0; o < out; ++o) {
                const double* wr = W[l]->values.data() + o * in;
                for (std::uint64_t i = 0; i < in; ++i) prev_delta[i] += wr[i] * delta[o];
            }
            for (std::uint64_t i = 0; i < in; ++i) {
                const double a = acts[l][i];
                prev_delta[i] *= spec.activation == Activation::tanh ? 1.0 - a * a : (pre[l][i] > 0.0 ? 1.0 : 0.0);
            }
            delta.swap(prev_delta);
        }
    }
    res.loss *= inv_n;
    res.metric = b.classification ? static_cast<double>(hits) * inv_n : res.metric * inv_n;
    return res;
}

inline EvalResult run_attn1(const ToyModelSpec& spec, const ModelSnapshot& m, const Dataset& b,
                            std::vector<LayerTensor>* grads) {
    const std::uint64_t d = spec.d_model, T = spec.seq_len, C = spec.n_outputs;
    const auto& Wq = need(m, "q_proj").values;
    const auto& Wk = need(m, "k_proj").values;
    const auto& Wv = need(m, "v_proj").values;
    const auto& Wo = need(m, "o_proj").values;
    const auto& Wh = need(m, "head.weight").values;
    const auto& bh = need(m, "head.bias").values;
    for (const char* n : {"q_proj", "k_proj", "v_proj", "o_proj"})
        if (need(m, n).shape != Shape{d, d}) throw DataError(std::string("layer '") + n + "' has wrong shape");
    if (need(m, "head.weight").shape != Shape{C, d} || need(m, "head.bias").shape != Shape{C})
        throw DataError("head layers have wrong shape");

    std::vector<double>*gq = nullptr, *gk = nullptr, *gv = nullptr, *go = nullptr, *gh = nullptr, *gb = nullptr;
    if (grads) {
        grads->clear();
        for (const auto& t : m.layers()) grads->emplace_back(t.name, t.shape);
        auto at = [&](const char* n) { return &(*grads)[*m.index_of(n)].values; };
        gq = at("q_proj"), gk = at("k_proj"), gv = at("v_proj"), go = at("o_proj");
        gh = at("head.weight"), gb = at("head.bias");
    }

    // X W^T for a T x d block.
    auto project = [&](const double* X, const std::vector<double>& W, std::vector<double>& out) {
        out.assign(T * d, 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t o = 0; o < d; ++o) {
                double z = 0.0;
                for (std::uint64_t i = 0; i < d; ++i) z += W[o * d + i] * X[t * d + i];
                out[t * d + o] = z;
            }
    };
    // dW += dY^T X.
    auto accumulate = [&](const std::vector<double>& dY, const double* X, std::vector<double>& dW) {
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t o = 0; o < d; ++o)
                for (std::uint64_t i = 0; i < d; ++i) dW[o * d + i] += dY[t * d + o] * X[t * d + i];
    };

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double inv_n = 1.0 / static_cast<double>(b.n);
    EvalResult res;
    std::uint64_t hits = 0;
    std::vector<double> Q, K, V, S(T * T), A(T * T), H(T * d), O, pooled(d), logits(C), dout;
    std::vector<double> dO(T * d), dH(T * d), dA(T * T), dS(T * T), dQ, dK, dV;
    for (std::uint64_t s = 0; s < b.n; ++s) {
        const double* X = b.row(s);
        project(X, Wq, Q);
        project(X, Wk, K);
        project(X, Wv, V);
        for (std::uint64_t t = 0; t < T; ++t) {
            double mx = -INFINITY;
            for (std::uint64_t u = 0; u < T; ++u) {
                double z = 0.0;
                for (std::uint64_t i = 0; i < d; ++i) z += Q[t * d + i] * K[u * d + i];
                S[t * T + u] = z * scale;
                mx = std::max(mx, S[t * T + u]);
            }
            double zsum = 0.0;
            for (std::uint64_t u = 0; u < T; ++u) zsum += (A[t * T + u] = std::exp(S[t * T + u] - mx));
            for (std::uint64_t u = 0; u < T; ++u) A[t * T + u] /= zsum;
        }
        std::fill(H.begin(), H.end(), 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t u = 0; u < T; ++u)
                for (std::uint64_t i = 0; i < d; ++i) H[t * d + i] += A[t * T + u] * V[u * d + i];
        project(H.data(), Wo, O);
        std::fill(pooled.begin(), pooled.end(), 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t i = 0; i < d; ++i) pooled[i] += O[t * d + i] / static_cast<double>(T);
        for (std::uint64_t c = 0; c < C; ++c) {
            double z = bh[c];
            for (std::uint64_t i = 0; i < d; ++i) z += Wh[c * d + i] * pooled[i];
            logits[c] = z;
        }

        bool correct = false;
        res.loss += output_loss(spec.loss, logits, b, s, grads ? &dout : nullptr, &correct);
        if (b.classification && correct) ++hits;
        if (!b.classification) res.metric += output_loss(LossKind::mse, logits, b, s, nullptr, nullptr);
        if (!grads) continue;

        for (auto& x : dout) x *= inv_n;
        std::vector<double> dpooled(d, 0.0);
        for (std::uint64_t c = 0; c < C; ++c) {
            (*gb)[c] += dout[c];
            for (std::uint64_t i = 0; i < d; ++i) {
                (*gh)[c * d + i] += dout[c] * pooled[i];
                dpooled[i] += Wh[c * d + i] * dout[c];
            }
        }
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t i = 0; i < d; ++i) dO[t * d + i] = dpooled[i] / static_cast<double>(T);
        accumulate(dO, H.data(), *go);
        std::fill(dH.begin(), dH.end(), 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t o = 0; o < d; ++o)
                for (std::uint64_t i = 0; i < d; ++i) dH[t * d + i] += dO[t * d + o] * Wo[o * d + i];
        dV.assign(T * d, 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t u = 0; u < T; ++u) {
                double z = 0.0;
                for (std::uint64_t i = 0; i < d; ++i) {
                    z += dH[t * d + i] * V[u * d + i];
                    dV[u * d + i] += A[t * T + u] * dH[t * d + i];
                }
                dA[t * T + u] = z;
            }
        for (std::uint64_t t = 0; t < T; ++t) {
            double dot = 0.0;
            for (std::uint64_t u = 0; u < T; ++u) dot += dA[t * T + u] * A[t * T + u];
            for (std::uint64_t u = 0; u < T; ++u) dS[t * T + u] = A[t * T + u] * (dA[t * T + u] - dot) * scale;
        }
        dQ.assign(T * d, 0.0);
        dK.assign(T * d, 0.0);
        for (std::uint64_t t = 0; t < T; ++t)
            for (std::uint64_t u = 0; u < T; ++u)
                for (std::uint64_t i = 0; i < d; ++i) {
                    dQ[t * d + i] += dS[t * T + u] * K[u * d + i];
                    dK[u * d + i] += dS[t * T + u] * Q[t * d + i];
                }
        accumulate(dQ, X, *gq);
        accumulate(dK, X, *gk);
        accumulate(dV, X, *gv);
    }
    res.loss *= inv_n;
    res.metric = b.classification ? static_cast<double>(hits) * inv_n : res.metric * inv_n;
    return res;
}

inline EvalResult run_model(const ToyModelSpec& spec, const ModelSnapshot& m, const Dataset& b,
                            std::vector<LayerTensor>* grads) {
    spec.validate();
    check_batch(spec, b);
    return spec.kind == ModelKind::mlp ? run_mlp(spec, m, b, grads) : run_attn1(spec, m, b, grads);
}

}  // namespace detail

enum class GradScope { tunable, all };

/// Mean loss over the batch and its exact gradient. With GradScope::tunable
/// the result pairs with the model's tunable layers.
inline LossAndGrads forward_backward(const ToyModelSpec& spec, const ModelSnapshot& model, const Dataset& batch,
                                     GradScope scope = GradScope::tunable) {
    std::vector<LayerTensor> all;
    LossAndGrads out;
    out.loss = detail::run_model(spec, model, batch, &all).loss;
    for (std::size_t i = 0; i < all.size(); ++i)
        if (scope == GradScope::all || model.tunable(i)) out.grads.layers.push_back(std::move(all[i]));
    return out;
}

inline EvalResult evaluate(const ToyModelSpec& spec, const ModelSnapshot& model, const Dataset& data) {
    if (data.n == 0) return {};
    return detail::run_model(spec, model, data, nullptr);
}

}  // namespace gem
