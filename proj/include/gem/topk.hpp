#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "gem/error.hpp"
#include "gem/layer_mask.hpp"
#include "gem/scoring.hpp"

namespace gem {

/// Indices of the k largest scores, ties to the lower index, returned in
/// ascending index order.
inline std::vector<std::uint64_t> top_k_indices(std::span<const double> scores, std::uint64_t k) {
    if (k > scores.size())
        throw UsageError("k = " + std::to_string(k) + " exceeds score count " + std::to_string(scores.size()));
    std::vector<std::uint64_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::uint64_t{0});
    if (k == 0) return {};
    if (k < idx.size()) {
        const auto before = [&](std::uint64_t a, std::uint64_t b) {
            return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
        };
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), before);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

inline LayerMask select_top_k(const ScoreVector& scores, std::uint64_t k, Shape shape = {}) {
    if (shape.empty()) shape = {scores.size()};
    if (shape_size(shape) != scores.size()) throw DataError("select_top_k: shape does not match score count");
    return LayerMask{scores.layer_name, std::move(shape), top_k_indices(scores.scores, k)};
}

}  // namespace gem
