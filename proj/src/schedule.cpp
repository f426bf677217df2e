#include "fade/schedule.hpp"

#include <cmath>

namespace fade {

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
    if (T < 2) throw InputError("schedule needs T >= 2");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw InputError("schedule requires 0 < beta_min <= beta_max < 1");
    if (1.0 - beta_min < 0.99 - 1e-12)
        throw InputError("beta_min too large: alpha_bar_0 must stay >= 0.99");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) / (T - 1);
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

std::vector<float> forward_diffuse(const std::vector<float>& x0, int t, const std::vector<float>& eps,
                                   const NoiseSchedule& sched) {
    if (x0.size() != eps.size()) throw InputError("forward_diffuse: noise shape mismatch");
    if (t < 0 || t >= sched.T) throw InputError("forward_diffuse: timestep out of range");
    const double ab = sched.alpha_bar[t];
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    std::vector<float> xt(x0.size());
    for (size_t i = 0; i < x0.size(); ++i)
        xt[i] = static_cast<float>(sa * static_cast<double>(x0[i]) + sb * static_cast<double>(eps[i]));
    return xt;
}

}  // namespace fade
