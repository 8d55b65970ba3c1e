#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/random.hpp"

namespace gem {

enum class TaskKind { two_gaussians_classification, teacher_student_regression };

inline const char* to_string(TaskKind k) {
    return k == TaskKind::two_gaussians_classification ? "two_gaussians_classification" : "teacher_student_regression";
}

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "two_gaussians_classification" || s == "two_gaussians") return TaskKind::two_gaussians_classification;
    if (s == "teacher_student_regression" || s == "teacher_student") return TaskKind::teacher_student_regression;
    throw UsageError("unknown task kind '" + s + "'");
}

/// Synthetic task, regenerable exactly from its fields. `shift` in [0, 1]
/// moves the task away from the shift = 0 source task: for two_gaussians it
/// rotates the class axis by shift * 90 degrees, for teacher_student it
/// perturbs the teacher weights by shift times their init scale.
struct TaskSpec {
    TaskKind kind = TaskKind::two_gaussians_classification;
    std::uint64_t input_dim = 16;
    std::uint64_t output_dim = 2;  // classes, or regression targets
    std::uint64_t n_train = 512;
    std::uint64_t n_eval = 256;
    double noise = 1.0;
    double separation = 1.5;
    double shift = 0.0;
    std::uint64_t teacher_hidden = 16;
    std::uint64_t seed = 0;

    bool classification() const { return kind == TaskKind::two_gaussians_classification; }

    void validate() const {
        if (input_dim == 0 || output_dim == 0 || n_train == 0) throw UsageError("task dimensions must be positive");
        if (kind == TaskKind::two_gaussians_classification && output_dim != 2)
            throw UsageError("two_gaussians_classification has exactly 2 classes");
        if (!(noise >= 0.0)) throw UsageError("task noise must be nonnegative");
        if (kind == TaskKind::two_gaussians_classification && input_dim < 2)
            throw UsageError("two_gaussians_classification needs input_dim >= 2");
    }
};

/// Row-major samples. Classification uses `labels`; regression `targets`.
struct Dataset {
    std::uint64_t input_dim = 0;
    std::uint64_t output_dim = 0;
    std::uint64_t n = 0;
    bool classification = true;
    std::vector<double> x;
    std::vector<double> targets;
    std::vector<std::uint32_t> labels;

    const double* row(std::uint64_t i) const { return x.data() + i * input_dim; }

    Dataset subset(const std::vector<std::uint64_t>& idx) const {
        Dataset b{input_dim, output_dim, idx.size(), classification, {}, {}, {}};
        b.x.reserve(idx.size() * input_dim);
        for (auto i : idx) {
            b.x.insert(b.x.end(), row(i), row(i) + input_dim);
            if (classification)
                b.labels.push_back(labels[i]);
            else
                b.targets.insert(b.targets.end(), targets.begin() + i * output_dim,
                                 targets.begin() + (i + 1) * output_dim);
        }
        return b;
    }
};

struct TaskData {
    Dataset train;
    Dataset eval;
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::uint64_t d) {
    std::vector<double> v(d);
    double nrm = 0.0;
    while (nrm == 0.0) {
        nrm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            nrm += x * x;
        }
    }
    nrm = std::sqrt(nrm);
    for (auto& x : v) x /= nrm;
    return v;
}

struct Teacher {
    std::uint64_t in, hidden, out;
    std::vector<double> w1, b1, w2;

    std::vector<double> apply(const double* x) const {
        std::vector<double> h(hidden), y(out, 0.0);
        for (std::uint64_t j = 0; j < hidden; ++j) {
            double z = b1[j];
            for (std::uint64_t i = 0; i < in; ++i) z += w1[j * in + i] * x[i];
            h[j] = std::tanh(z);
        }
        for (std::uint64_t o = 0; o < out; ++o)
            for (std::uint64_t j = 0; j < hidden; ++j) y[o] += w2[o * hidden + j] * h[j];
        return y;
    }
};

}  // namespace detail

inline TaskData make_task(const TaskSpec& spec) {
    spec.validate();
    const std::uint64_t d = spec.input_dim;
    Rng structure(Rng::derive(spec.seed, 1));
    Rng shift_rng(Rng::derive(spec.seed, 2));

    auto make_split = [&](std::uint64_t n, std::uint64_t stream) {
        Dataset ds{d, spec.output_dim, n, spec.classification(), {}, {}, {}};
        ds.x.resize(n * d);
        return std::make_pair(ds, Rng(Rng::derive(spec.seed, stream)));
    };

    TaskData out;
    if (spec.classification()) {
        // Class axis u, rotated toward an orthogonal v by the shift.
        auto u = detail::random_unit(structure, d);
        auto v = detail::random_unit(shift_rng, d);
        double dot = 0.0;
        for (std::uint64_t i = 0; i < d; ++i) dot += u[i] * v[i];
        double nv = 0.0;
        for (std::uint64_t i = 0; i < d; ++i) {
            v[i] -= dot * u[i];
            nv += v[i] * v[i];
        }
        nv = std::sqrt(nv);
        const double angle = spec.shift * std::numbers::pi / 2.0;
        std::vector<double> axis(d);
        for (std::uint64_t i = 0; i < d; ++i) axis[i] = std::cos(angle) * u[i] + std::sin(angle) * v[i] / nv;

        auto fill = [&](std::uint64_t n, std::uint64_t stream) {
            auto [ds, rng] = make_split(n, stream);
            ds.labels.resize(n);
            for (std::uint64_t s = 0; s < n; ++s) {
                const std::uint32_t c = static_cast<std::uint32_t>(rng.below(2));
                const double sign = c == 0 ? 1.0 : -1.0;
                ds.labels[s] = c;
                for (std::uint64_t i = 0; i < d; ++i)
                    ds.x[s * d + i] = sign * spec.separation * axis[i] + spec.noise * rng.normal();
            }
            return ds;
        };
        out.train = fill(spec.n_train, 10);
        out.eval = fill(spec.n_eval, 11);
    } else {
        detail::Teacher t{d, spec.teacher_hidden, spec.output_dim, {}, {}, {}};
        const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(spec.teacher_hidden));
        for (std::uint64_t i = 0; i < spec.teacher_hidden * d; ++i)
            t.w1.push_back(structure.normal(0.0, s1) + spec.shift * shift_rng.normal(0.0, s1));
        for (std::uint64_t i = 0; i < spec.teacher_hidden; ++i)
            t.b1.push_back(structure.normal(0.0, 0.1) + spec.shift * shift_rng.normal(0.0, 0.1));
        for (std::uint64_t i = 0; i < spec.output_dim * spec.teacher_hidden; ++i)
            t.w2.push_back(structure.normal(0.0, s2) + spec.shift * shift_rng.normal(0.0, s2));

        auto fill = [&](std::uint64_t n, std::uint64_t stream) {
            auto [ds, rng] = make_split(n, stream);
            ds.targets.resize(n * spec.output_dim);
            for (std::uint64_t s = 0; s < n; ++s) {
                for (std::uint64_t i = 0; i < d; ++i) ds.x[s * d + i] = rng.normal();
                const auto y = t.apply(ds.row(s));
                for (std::uint64_t o = 0; o < spec.output_dim; ++o)
                    ds.targets[s * spec.output_dim + o] = y[o] + spec.noise * rng.normal();
            }
            return ds;
        };
        out.train = fill(spec.n_train, 10);
        out.eval = fill(spec.n_eval, 11);
    }
    return out;
}

}  // namespace gem
