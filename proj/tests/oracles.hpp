#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gem/gem.hpp"

namespace gem::oracle {

// Exhaustive k-subset search: the subset with the largest score sum, and among
// equal sums the lexicographically smallest index list. Sums are carried in
// long double, which is exact for the small-integer scores used to force ties.
inline std::vector<std::uint64_t> best_k_subset(const std::vector<double>& s, std::size_t k) {
    const std::size_t n = s.size();
    std::vector<std::uint64_t> best;
    if (k == 0) return best;
    std::vector<std::size_t> c(k);
    for (std::size_t i = 0; i < k; ++i) c[i] = i;
    long double best_sum = -1.0L;
    while (true) {
        long double sum = 0.0L;
        for (auto i : c) sum += s[i];
        // Enumeration is lexicographic, so only a strictly larger sum replaces.
        if (sum > best_sum) {
            best_sum = sum;
            best.assign(c.begin(), c.end());
        }
        std::size_t i = k;
        while (i > 0 && c[i - 1] == n - k + (i - 1)) --i;
        if (i == 0) break;
        ++c[i - 1];
        for (std::size_t j = i; j < k; ++j) c[j] = c[j - 1] + 1;
    }
    return best;
}

// Captured share by direct summation, independent of the library's reduction order.
inline double captured_share(const std::vector<std::vector<double>>& scores,
                             const std::vector<std::vector<std::uint64_t>>& selected) {
    long double num = 0.0L, den = 0.0L;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        for (double x : scores[l]) den += x;
        for (auto i : selected[l]) num += scores[l][i];
    }
    return den == 0.0L ? 0.0 : static_cast<double>(num / den);
}

// Textbook scalar AdamW with decoupled decay.
struct ScalarAdamW {
    double lr, b1, b2, eps, wd;
    double m = 0.0, v = 0.0;
    int t = 0;

    double step(double w, double g) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mh = m / (1.0 - std::pow(b1, t));
        const double vh = v / (1.0 - std::pow(b2, t));
        w = w - lr * wd * w;
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace gem::oracle
