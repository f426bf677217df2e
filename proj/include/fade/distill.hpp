#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fade/adapter.hpp"
#include "fade/dataset.hpp"
#include "fade/masks.hpp"
#include "fade/net.hpp"
#include "fade/optimizer.hpp"
#include "fade/schedule.hpp"

namespace fade {

// Unlearning trainer configuration. Defaults follow the benchmark table:
// AdamW(0.9, 0.999, 1e-8), lr 1e-4, weight decay 1e-2, batch 4, 1550 steps,
// constant scheduler, no warmup, horizontal flips on.
struct TrainConfig {
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-2;
    int batch_size = 4;
    int max_steps = 1550;
    int warmup_steps = 0;
    std::string scheduler = "constant";  // constant | linear
    double max_grad_norm = 5.0;
    int checkpoint_every = 100;
    int report_every = 100;
    uint64_t seed = 0;
    bool horizontal_flip = true;
    // Relative weight of the forget term; 1 = the plain two-term sum. Exposed
    // to trade forgetting speed against retention.
    double forget_weight = 1.0;

    void validate() const {
        if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
        if (report_every % checkpoint_every != 0)
            throw ConfigError("report_every must be a multiple of checkpoint_every");
        if (scheduler != "constant" && scheduler != "linear")
            throw ConfigError("scheduler must be constant or linear");
    }
};

struct LossBreakdown {
    double retain_term = 0.0;
    double forget_term = 0.0;
    double total = 0.0;  // retain_term + forget_term
};

struct StepStats {
    LossBreakdown loss;
    double grad_norm = 0.0;  // global L2 before clipping
};

struct BatchItem {
    std::vector<float> x;          // clean image
    std::array<int, 2> prompt;     // its own concept tokens
};

// One self-distillation update. Per item a fresh (t, eps) pair is drawn and
// shared between teacher and student:
//   retain: teacher = adapter-off forward(f(x_r,t,eps), p_r),
//           student = adapter-on  forward(same, p_r)
//   forget: teacher = adapter-off forward(f(x_f,t,eps), p_o),
//           student = adapter-on  forward(same, p_f)
// Teacher passes carry no gradient; one clipped AdamW step is applied to the
// adapter parameters only. The loss lives directly in image space.
StepStats distill_step(DenoiserNetF& net, SparseAdapterF& adapter, const std::vector<BatchItem>& batch_r,
                       const std::vector<BatchItem>& batch_f, const OverwriteSpec& overwrite,
                       const ConceptRef& forget, const NoiseSchedule& sched, AdamW& opt,
                       const TrainConfig& cfg, Rng& rng, int step_index = 0);

struct UnlearnCurveRow {
    int step = 0;
    double retain_term = 0.0;
    double forget_term = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
};

struct UnlearnResult {
    SparseAdapterF adapter;  // final state
    std::vector<std::pair<int, SparseAdapterF>> checkpoints;  // step 0, every cfg.checkpoint_every, final
    std::vector<UnlearnCurveRow> curve;
    std::vector<std::pair<int, std::string>> checkpoint_paths;  // populated when out_dir given
};

// Full unlearning run. The base net is frozen (bit-identical before/after);
// every update lives in the adapter. Deterministic per cfg.seed. When
// out_dir is non-empty, adapter checkpoints and the loss-curve CSV are
// written there.
UnlearnResult run_unlearning(DenoiserNetF& base, const ConceptDataset& data, const OverwriteSpec& overwrite,
                             const BinaryMask* mask, const NoiseSchedule& sched, const TrainConfig& cfg,
                             const LoraConfig& lora, const std::string& out_dir = "");

void write_curve_csv(const std::string& path, const std::vector<UnlearnCurveRow>& curve);

}  // namespace fade
