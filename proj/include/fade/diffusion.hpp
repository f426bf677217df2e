#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "fade/dataset.hpp"
#include "fade/net.hpp"
#include "fade/schedule.hpp"

namespace fade {

struct BaseTrainConfig {
    NetConfig net;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double max_grad_norm = 1.0;
    int batch_size = 8;
    int max_steps = 3000;
    bool horizontal_flip = true;
    uint64_t seed = 42;
};

struct BaseTrainResult {
    DenoiserNetF net;
    std::vector<double> loss_per_step;
};

// Noise-prediction training of the base model over the full dataset
// (both splits). Deterministic per seed; same seed twice gives a
// byte-identical checkpoint.
BaseTrainResult train_base(const ConceptDataset& data, const NoiseSchedule& sched,
                           const BaseTrainConfig& cfg);

// Sink invoked with each timestep's attention records during sampling.
using CaptureSink = std::vector<AttentionRecord<float>>;

// Ancestral sampling from pure noise, deterministic per seed, output clamped
// to [0,1]. When `capture` is given, every (head, timestep) attention map is
// appended to it; capture never perturbs the generated image.
std::vector<float> sample(DenoiserNetF& net, const std::array<int, 2>& cond, const NoiseSchedule& sched,
                          uint64_t seed, CaptureSink* capture = nullptr);

}  // namespace fade
