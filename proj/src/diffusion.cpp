#include "fade/diffusion.hpp"

#include <cmath>

#include "fade/optimizer.hpp"
#include "fade/rng.hpp"

namespace fade {

BaseTrainResult train_base(const ConceptDataset& data, const NoiseSchedule& sched,
                           const BaseTrainConfig& cfg) {
    for (int s = 0; s < kNumShapes; ++s)
        for (int p = 0; p < kNumPalettes; ++p)
            if (data.indices_of_cell(s, p).empty())
                throw InputError("train_base: dataset does not cover every concept combination");
    if (cfg.net.timesteps != sched.T) throw InputError("train_base: schedule length mismatch");
    if (cfg.batch_size < 1) throw InputError("train_base: batch_size must be >= 1");

    BaseTrainResult out;
    out.net = DenoiserNetF(cfg.net, mix_seed({cfg.seed, 0xba5e}));
    DenoiserNetF& net = out.net;

    AdamW opt({cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
    Rng rng(mix_seed({cfg.seed, 0x7a17}));
    const int n_tokens = cfg.net.n_tokens();
    const int n_data = static_cast<int>(data.images.size());

    std::map<std::string, std::vector<double>> acc;
    std::vector<float> eps(static_cast<size_t>(n_tokens));
    std::vector<float> up(static_cast<size_t>(n_tokens));

    for (int step = 0; step < cfg.max_steps; ++step) {
        for (auto& [id, buf] : acc) std::fill(buf.begin(), buf.end(), 0.0);
        double loss = 0.0;
        for (int k = 0; k < cfg.batch_size; ++k) {
            const ConceptImage& im = data.images[static_cast<size_t>(rng.uniform_int(n_data))];
            const bool flip = cfg.horizontal_flip && rng.bernoulli(0.5);
            const std::vector<float> x0 = flip ? hflip(im.pix, data.img) : im.pix;
            const int t = rng.uniform_int(sched.T);
            for (auto& e : eps) e = static_cast<float>(rng.gaussian());
            const auto xt = forward_diffuse(x0, t, eps, sched);
            const auto prompt = im.prompt();

            DenoiserNetF::ForwardOptions fo;
            fo.train = true;
            const auto res = net.forward(xt, t, {prompt[0], prompt[1]}, fo);
            double item_loss = 0.0;
            for (int i = 0; i < n_tokens; ++i) {
                const double d = static_cast<double>(res.eps[static_cast<size_t>(i)]) -
                                 static_cast<double>(eps[static_cast<size_t>(i)]);
                item_loss += d * d;
                up[static_cast<size_t>(i)] =
                    static_cast<float>(2.0 * d / (static_cast<double>(n_tokens) * cfg.batch_size));
            }
            loss += item_loss / n_tokens;
            const auto grads = net.backward(up);
            for (const auto& [id, g] : grads) {
                auto [it, inserted] = acc.try_emplace(id);
                if (inserted) it->second.assign(g.size(), 0.0);
                for (size_t i = 0; i < g.size(); ++i) it->second[i] += static_cast<double>(g[i]);
            }
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss)) throw TrainingError("base training diverged (loss not finite)", step);
        out.loss_per_step.push_back(loss);

        std::map<std::string, std::vector<float>> gradf;
        std::map<std::string, std::vector<float>*> gviews, pviews;
        for (auto& [id, buf] : acc) {
            auto& g = gradf[id];
            g.resize(buf.size());
            for (size_t i = 0; i < buf.size(); ++i) g[i] = static_cast<float>(buf[i]);
            gviews[id] = &g;
            pviews[id] = &net.param(id).values;
        }
        clip_gradients(gviews, cfg.max_grad_norm);
        opt.step(pviews, gviews);
    }
    return out;
}

std::vector<float> sample(DenoiserNetF& net, const std::array<int, 2>& cond, const NoiseSchedule& sched,
                          uint64_t seed, CaptureSink* capture) {
    if (net.config().timesteps != sched.T) throw InputError("sample: schedule length mismatch");
    const int n = net.config().n_tokens();
    Rng rng(mix_seed({seed, 0x5a3c}));
    std::vector<float> x(static_cast<size_t>(n));
    for (auto& v : x) v = static_cast<float>(rng.gaussian());

    DenoiserNetF::ForwardOptions fo;
    fo.capture = capture != nullptr;
    for (int t = sched.T - 1; t >= 0; --t) {
        auto res = net.forward(x, t, {cond[0], cond[1]}, fo);
        if (capture)
            for (auto& rec : res.records) capture->push_back(std::move(rec));
        const double beta = sched.beta[t];
        const double ab = sched.alpha_bar[t];
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double eps_coef = beta / std::sqrt(1.0 - ab);
        if (t > 0) {
            const double ab_prev = sched.alpha_bar[t - 1];
            const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
            for (int i = 0; i < n; ++i) {
                const double mean = inv_sqrt_alpha *
                                    (static_cast<double>(x[static_cast<size_t>(i)]) -
                                     eps_coef * static_cast<double>(res.eps[static_cast<size_t>(i)]));
                x[static_cast<size_t>(i)] = static_cast<float>(mean + sigma * rng.gaussian());
            }
        } else {
            for (int i = 0; i < n; ++i) {
                const double mean = inv_sqrt_alpha *
                                    (static_cast<double>(x[static_cast<size_t>(i)]) -
                                     eps_coef * static_cast<double>(res.eps[static_cast<size_t>(i)]));
                x[static_cast<size_t>(i)] = static_cast<float>(std::clamp(mean, 0.0, 1.0));
            }
        }
    }
    return x;
}

}  // namespace fade
