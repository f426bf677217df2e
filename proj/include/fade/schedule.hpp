#pragma once

#include <vector>

#include "fade/errors.hpp"

namespace fade {

// Per-timestep diffusion coefficients. beta is the per-step noise variance,
// alpha_bar the running product of (1 - beta).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

// Linear beta interpolation between beta_min and beta_max over T steps.
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
std::vector<float> forward_diffuse(const std::vector<float>& x0, int t, const std::vector<float>& eps,
                                   const NoiseSchedule& sched);

}  // namespace fade
