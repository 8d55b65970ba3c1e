#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace gem::numeric {

// Recursive pairwise summation over a fixed split pattern, so the result
// depends only on the input order.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kBlock = 32;
    if (xs.size() <= kBlock) {
        double acc = 0.0;
        for (double x : xs) acc += x;
        return acc;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

template <typename F>
double pairwise_sum_of(std::size_t n, F&& term, std::size_t offset = 0) {
    constexpr std::size_t kBlock = 32;
    if (n <= kBlock) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += term(offset + i);
        return acc;
    }
    const std::size_t half = n / 2;
    return pairwise_sum_of(half, term, offset) + pairwise_sum_of(n - half, term, offset + half);
}

// Neumaier's variant of Kahan summation.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double l2_norm(std::span<const double> xs) {
    return std::sqrt(pairwise_sum_of(xs.size(), [&](std::size_t i) { return xs[i] * xs[i]; }));
}

}  // namespace gem::numeric
