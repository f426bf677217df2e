#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fade/errors.hpp"

namespace fade {

// Accumulated |gradient| of the diffusion loss over the forget set,
// layer_id -> flat nonnegative array shaped like the parameter.
using SaliencyMap = std::map<std::string, std::vector<float>>;

enum class MaskGranularity : uint8_t { PerWeight = 0, PerBlock = 1 };

// How a tensor is partitioned into blocks for coarse-grained masking.
enum class BlockSpec : uint8_t {
    PerOutputRow = 0,  // one block per output row (default)
    PerLayer = 1,      // one block spanning the whole tensor
};

// Binary parameter selection, layer_id -> {0,1} array shaped like the
// parameter. Stored unpacked in memory, bit-packed on disk.
struct BinaryMask {
    std::map<std::string, std::vector<uint8_t>> bits;
    MaskGranularity granularity = MaskGranularity::PerWeight;

    int64_t count_ones() const {
        int64_t n = 0;
        for (const auto& [id, v] : bits) n += std::count(v.begin(), v.end(), uint8_t{1});
        return n;
    }
    int64_t count_total() const {
        int64_t n = 0;
        for (const auto& [id, v] : bits) n += static_cast<int64_t>(v.size());
        return n;
    }
    double density() const {
        const int64_t total = count_total();
        return total == 0 ? 0.0 : static_cast<double>(count_ones()) / static_cast<double>(total);
    }
};

struct OverlapStats {
    int64_t intersection = 0;
    int64_t union_count = 0;
    int64_t count_a = 0;  // |m_f|
    int64_t count_b = 0;  // |m_o|
    double jaccard = 0.0;
    double frac_a_in_b = 0.0;  // |intersection| / |m_f|
};

BinaryMask threshold_mask(const SaliencyMap& sal, double gamma);
BinaryMask topq_mask(const SaliencyMap& sal, double q);
BinaryMask block_mask(const SaliencyMap& sal, double q, BlockSpec spec,
                      const std::map<std::string, std::vector<int>>& shapes);
OverlapStats mask_overlap(const BinaryMask& mf, const BinaryMask& mo);

// Mask file: header (granularity, selection kind, Q or gamma, source-dataset
// fingerprint), then per layer: id, shape, bit-packed mask.
struct MaskFileMeta {
    MaskGranularity granularity = MaskGranularity::PerWeight;
    uint8_t selection_kind = 0;  // 0 = gamma threshold, 1 = top-Q, 2 = per-block top-Q
    double selection_param = 0.0;
    uint64_t dataset_fingerprint = 0;
};

void save_mask(const std::string& path, const BinaryMask& mask, const MaskFileMeta& meta,
               const std::map<std::string, std::vector<int>>& shapes);
BinaryMask load_mask(const std::string& path, MaskFileMeta* meta_out = nullptr,
                     std::map<std::string, std::vector<int>>* shapes_out = nullptr);

}  // namespace fade
