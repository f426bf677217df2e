#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fade/errors.hpp"

namespace fade {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// Decoupled weight decay Adam over named parameter groups. State is keyed by
// name so step order never depends on map instance addresses.
class AdamW {
public:
    explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {
        if (cfg.lr < 0) throw InputError("AdamW: negative learning rate");
    }

    // One update; `lr_scale` implements schedulers (1.0 = constant).
    void step(const std::map<std::string, std::vector<float>*>& params,
              const std::map<std::string, std::vector<float>*>& grads, double lr_scale = 1.0);

    int64_t steps_taken() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamWConfig cfg_;
    std::map<std::string, Moments> state_;
    int64_t step_count_ = 0;
};

// Scale all gradients so the global L2 norm is at most max_norm; direction
// preserved, no-op when already within. Returns the pre-clip norm.
double clip_gradients(const std::map<std::string, std::vector<float>*>& grads, double max_norm);

}  // namespace fade
