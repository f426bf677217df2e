#include "fade/optimizer.hpp"

#include <cmath>

namespace fade {

void AdamW::step(const std::map<std::string, std::vector<float>*>& params,
                 const std::map<std::string, std::vector<float>*>& grads, double lr_scale) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    const double lr = cfg_.lr * lr_scale;
    for (const auto& [name, pv] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw InputError("AdamW: missing gradient for " + name);
        std::vector<float>& p = *pv;
        const std::vector<float>& g = *git->second;
        if (p.size() != g.size()) throw InputError("AdamW: gradient shape mismatch for " + name);
        auto& mom = state_[name];
        if (mom.m.empty()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        }
        for (size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            double x = static_cast<double>(p[i]);
            x -= lr * cfg_.weight_decay * x;  // decoupled decay
            x -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            p[i] = static_cast<float>(x);
        }
    }
}

double clip_gradients(const std::map<std::string, std::vector<float>*>& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw InputError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (const auto& [name, gv] : grads)
        for (float g : *gv) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [name, gv] : grads)
            for (float& g : *gv) g = static_cast<float>(static_cast<double>(g) * s);
    }
    return norm;
}

}  // namespace fade
