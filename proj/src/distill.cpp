#include "fade/distill.hpp"

#include <cmath>
#include <fstream>

#include "fade/io.hpp"

namespace fade {

namespace {

double lr_scale_at(const TrainConfig& cfg, int step) {
    double s = 1.0;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        s = static_cast<double>(step + 1) / cfg.warmup_steps;
    if (cfg.scheduler == "linear" && cfg.max_steps > 0) {
        const double progress = static_cast<double>(step) / cfg.max_steps;
        s *= 1.0 - progress;
    }
    return s;
}

// Teacher/student pair on identical noised input; returns the mean pixel MSE
// and accumulates adapter gradients scaled by `weight`.
double distill_item(DenoiserNetF& net, SparseAdapterF& adapter, const std::vector<float>& x0,
                    const std::array<int, 2>& teacher_prompt, const std::array<int, 2>& student_prompt,
                    int t, const std::vector<float>& eps, const NoiseSchedule& sched, double weight,
                    int batch_size, Rng& rng) {
    const int n = static_cast<int>(x0.size());
    const auto xt = forward_diffuse(x0, t, eps, sched);

    adapter.set_enabled(false);
    const auto teacher = net.forward(xt, t, {teacher_prompt[0], teacher_prompt[1]}, {});
    adapter.set_enabled(true);

    DenoiserNetF::ForwardOptions fo;
    fo.train = true;
    fo.rng = &rng;
    const auto student = net.forward(xt, t, {student_prompt[0], student_prompt[1]}, fo);

    double mse = 0.0;
    std::vector<float> up(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(student.eps[static_cast<size_t>(i)]) -
                         static_cast<double>(teacher.eps[static_cast<size_t>(i)]);
        mse += d * d;
        up[static_cast<size_t>(i)] =
            static_cast<float>(weight * 2.0 * d / (static_cast<double>(n) * batch_size));
    }
    net.backward(up);  // adapter grads accumulate; base params are frozen
    return mse / n;
}

}  // namespace

StepStats distill_step(DenoiserNetF& net, SparseAdapterF& adapter, const std::vector<BatchItem>& batch_r,
                       const std::vector<BatchItem>& batch_f, const OverwriteSpec& overwrite,
                       const ConceptRef& forget, const NoiseSchedule& sched, AdamW& opt,
                       const TrainConfig& cfg, Rng& rng, int step_index) {
    if (!adapter.enabled) throw StateError("distill_step: adapter must be enabled at entry");
    if (adapter.merged) throw StateError("distill_step: adapter is merged");
    if (batch_r.empty() || batch_f.empty()) throw InputError("distill_step: batches must be nonempty");
    if (net.adapter() != &adapter) throw StateError("distill_step: adapter not attached to this net");

    net.set_requires_grad(false);  // frozen base; only adapter params move
    adapter.zero_grads();

    const int n = net.config().n_tokens();
    std::vector<float> eps(static_cast<size_t>(n));
    StepStats st;

    for (const BatchItem& item : batch_r) {
        const int t = rng.uniform_int(sched.T);
        for (auto& e : eps) e = static_cast<float>(rng.gaussian());
        st.loss.retain_term += distill_item(net, adapter, item.x, item.prompt, item.prompt, t, eps,
                                            sched, 1.0, static_cast<int>(batch_r.size()), rng);
    }
    st.loss.retain_term /= static_cast<double>(batch_r.size());

    for (const BatchItem& item : batch_f) {
        const int t = rng.uniform_int(sched.T);
        for (auto& e : eps) e = static_cast<float>(rng.gaussian());
        ConceptImage tmp;
        tmp.shape = item.prompt[0] - kShapeTokenBase;
        tmp.palette = item.prompt[1] - kPaletteTokenBase;
        const auto p_o = overwrite_prompt(tmp, forget, overwrite);
        st.loss.forget_term += distill_item(net, adapter, item.x, p_o, item.prompt, t, eps, sched,
                                            cfg.forget_weight, static_cast<int>(batch_f.size()), rng);
    }
    st.loss.forget_term /= static_cast<double>(batch_f.size());
    st.loss.total = st.loss.retain_term + st.loss.forget_term;

    if (!std::isfinite(st.loss.total))
        throw TrainingError("distillation loss is not finite", step_index);

    st.grad_norm = clip_gradients(adapter.grad_view(), cfg.max_grad_norm);
    opt.step(adapter.param_view(), adapter.grad_view(), lr_scale_at(cfg, step_index));
    adapter.invalidate_deltas();
    return st;
}

UnlearnResult run_unlearning(DenoiserNetF& base, const ConceptDataset& data, const OverwriteSpec& overwrite,
                             const BinaryMask* mask, const NoiseSchedule& sched, const TrainConfig& cfg,
                             const LoraConfig& lora, const std::string& out_dir) {
    cfg.validate();
    const auto retain = data.indices_of(Split::Retain);
    const auto forget = data.indices_of(Split::Forget);
    if (retain.empty() || forget.empty())
        throw InputError("run_unlearning: both splits must be nonempty");

    LoraConfig lcfg = lora;
    lcfg.init_seed = mix_seed({cfg.seed, 0xada7});
    auto adapter = attach<float>(base, adapter_target_layers(), lcfg, mask);

    AdamW opt({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay});
    Rng rng(mix_seed({cfg.seed, 0xd157}));

    UnlearnResult res;
    const auto snapshot = [&](int step) {
        res.checkpoints.emplace_back(step, *adapter);
        if (!out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "adapter_step_%06d.bin", step);
            const std::string path = out_dir + "/checkpoints/" + name;
            save_adapter(*adapter, path);
            res.checkpoint_paths.emplace_back(step, path);
        }
    };
    if (!out_dir.empty()) ensure_dir(out_dir + "/checkpoints");
    snapshot(0);

    const auto draw_batch = [&](const std::vector<int>& pool) {
        std::vector<BatchItem> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int k = 0; k < cfg.batch_size; ++k) {
            const ConceptImage& im =
                data.images[static_cast<size_t>(pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))])];
            BatchItem item;
            item.x = (cfg.horizontal_flip && rng.bernoulli(0.5)) ? hflip(im.pix, data.img) : im.pix;
            item.prompt = im.prompt();
            batch.push_back(std::move(item));
        }
        return batch;
    };

    for (int step = 0; step < cfg.max_steps; ++step) {
        const auto batch_r = draw_batch(retain);
        const auto batch_f = draw_batch(forget);
        StepStats st;
        try {
            st = distill_step(base, *adapter, batch_r, batch_f, overwrite, data.forget_concept, sched,
                              opt, cfg, rng, step);
        } catch (const TrainingError&) {
            base.detach_adapter();
            base.set_requires_grad(true);
            throw;
        }
        res.curve.push_back({step, st.loss.retain_term, st.loss.forget_term, st.loss.total, st.grad_norm});
        const int done = step + 1;
        if (done % cfg.checkpoint_every == 0 && done != cfg.max_steps) snapshot(done);
    }
    if (cfg.max_steps > 0) snapshot(cfg.max_steps);

    if (!out_dir.empty()) write_curve_csv(out_dir + "/curves.csv", res.curve);

    res.adapter = *adapter;
    base.detach_adapter();
    base.set_requires_grad(true);
    return res;
}

void write_curve_csv(const std::string& path, const std::vector<UnlearnCurveRow>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path);
    out << "step,retain_term,forget_term,total,grad_norm\n";
    for (const auto& row : curve)
        out << row.step << ',' << fmt_g(row.retain_term) << ',' << fmt_g(row.forget_term) << ','
            << fmt_g(row.total) << ',' << fmt_g(row.grad_norm) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace fade
