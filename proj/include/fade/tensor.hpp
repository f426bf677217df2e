#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "fade/errors.hpp"

namespace fade {

// Named parameter tensor. Stable string ids key every downstream structure
// (gradients, saliency maps, masks, adapters, optimizer state), so they must
// not change between runs or versions.
template <typename Real>
struct ParamTensor {
    std::string id;
    std::vector<int> shape;
    std::vector<Real> values;
    bool requires_grad = true;

    int64_t size() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    // 2-D accessors; rows = output dim, cols = input dim (row-major storage).
    int rows() const { return shape.size() == 2 ? shape[0] : static_cast<int>(size()); }
    int cols() const { return shape.size() == 2 ? shape[1] : 1; }

    void validate() const {
        if (size() != static_cast<int64_t>(values.size()))
            throw InputError("ParamTensor " + id + ": shape/value count mismatch");
    }
};

// Gradient carrier: layer_id -> flat array, same shape as the owning tensor.
// std::map keeps iteration order deterministic.
template <typename Real>
using Gradients = std::map<std::string, std::vector<Real>>;

// Cross-attention weights captured during one forward pass.
// rows = image tokens, cols = condition tokens; each row sums to 1.
template <typename Real>
struct AttentionRecord {
    std::string layer_id;
    int head = 0;
    int t = 0;
    int rows = 0;
    int cols = 0;
    std::vector<Real> weights;  // row-major rows x cols

    Real at(int r, int c) const { return weights[static_cast<size_t>(r) * cols + c]; }
};

}  // namespace fade
