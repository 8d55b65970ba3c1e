#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/model_store.hpp"

namespace gem {

/// Selected flat indices of one layer, strictly ascending.
struct LayerMask {
    std::string layer_name;
    Shape shape;
    std::vector<std::uint64_t> indices;

    std::uint64_t param_count() const { return shape_size(shape); }
    std::size_t count() const { return indices.size(); }

    void validate() const {
        const std::uint64_t n = param_count();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= n)
                throw DataError("mask '" + layer_name + "': index " + std::to_string(indices[i]) +
                                " out of range for " + std::to_string(n) + " parameters");
            if (i > 0 && indices[i] <= indices[i - 1])
                throw DataError("mask '" + layer_name + "': indices not strictly ascending at position " +
                                std::to_string(i));
        }
    }

    // Dense 0/1 view, mostly for tests and debugging.
    std::vector<std::uint8_t> dense() const {
        std::vector<std::uint8_t> out(param_count(), 0);
        for (auto i : indices) out.at(i) = 1;
        return out;
    }

    friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

inline LayerMask full_mask(const LayerTensor& t) {
    LayerMask m{t.name, t.shape, {}};
    m.indices.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) m.indices[i] = i;
    return m;
}

}  // namespace gem
