#include "fade/saliency.hpp"

#include <cmath>

#include "fade/rng.hpp"

namespace fade {

std::map<std::string, std::vector<int>> target_shapes(const DenoiserNetF& net) {
    std::map<std::string, std::vector<int>> shapes;
    for (const auto& id : adapter_target_layers()) shapes[id] = net.param(id).shape;
    return shapes;
}

SaliencyMap compute_saliency(DenoiserNetF& net, const ConceptDataset& data, const NoiseSchedule& sched,
                             int n_batches, int batch_size, uint64_t seed) {
    const auto forget = data.indices_of(Split::Forget);
    if (forget.empty()) throw InputError("compute_saliency: forget set is empty");
    if (n_batches < 1 || batch_size < 1) throw InputError("compute_saliency: need at least one batch");
    if (net.config().timesteps != sched.T) throw InputError("schedule length does not match the net");

    const auto targets = adapter_target_layers();
    std::map<std::string, std::vector<double>> acc;
    for (const auto& id : targets) acc[id].assign(net.param(id).size(), 0.0);

    // gradients only where saliency needs them
    net.set_requires_grad(false);
    for (const auto& id : targets) net.param(id).requires_grad = true;

    const int n_tokens = net.config().n_tokens();
    Rng rng(mix_seed({seed, 0x5a11}));
    std::vector<float> eps(n_tokens);
    int64_t n_samples = 0;
    for (int b = 0; b < n_batches; ++b) {
        for (int k = 0; k < batch_size; ++k) {
            const ConceptImage& im = data.images[static_cast<size_t>(
                forget[static_cast<size_t>(rng.uniform_int(static_cast<int>(forget.size())))])];
            const int t = rng.uniform_int(sched.T);
            for (auto& e : eps) e = static_cast<float>(rng.gaussian());
            const auto xt = forward_diffuse(im.pix, t, eps, sched);
            const auto prompt = im.prompt();

            DenoiserNetF::ForwardOptions fo;
            fo.train = true;
            const auto res = net.forward(xt, t, {prompt[0], prompt[1]}, fo);
            // L = mean_i (eps_i - eps_hat_i)^2  =>  dL/deps_hat = 2(eps_hat - eps)/n
            std::vector<float> up(static_cast<size_t>(n_tokens));
            for (int i = 0; i < n_tokens; ++i)
                up[static_cast<size_t>(i)] =
                    static_cast<float>(2.0 * (static_cast<double>(res.eps[static_cast<size_t>(i)]) -
                                              static_cast<double>(eps[static_cast<size_t>(i)])) / n_tokens);
            const auto grads = net.backward(up);
            for (const auto& id : targets) {
                const auto& g = grads.at(id);
                auto& a = acc[id];
                for (size_t i = 0; i < g.size(); ++i) a[i] += std::abs(static_cast<double>(g[i]));
            }
            ++n_samples;
        }
    }
    net.set_requires_grad(true);

    SaliencyMap sal;
    for (auto& [id, a] : acc) {
        std::vector<float> v(a.size());
        for (size_t i = 0; i < a.size(); ++i)
            v[i] = static_cast<float>(a[i] / static_cast<double>(n_samples));
        sal.emplace(id, std::move(v));
    }
    return sal;
}

}  // namespace fade
