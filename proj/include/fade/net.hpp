#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "fade/adapter.hpp"
#include "fade/errors.hpp"
#include "fade/linalg.hpp"
#include "fade/rng.hpp"
#include "fade/tensor.hpp"

namespace fade {

// Conditional denoiser over 16x16 single-channel images. Image tokens are the
// pixels (one token per pixel), lifted to d_model, with learned positional and
// timestep embeddings. One cross-attention block attends to the two concept
// tokens, followed by two dense blocks and a per-token output head.
struct NetConfig {
    int img = 16;       // image side; tokens = img*img
    int d_model = 32;
    int n_heads = 4;
    int d_hidden = 64;
    int timesteps = 100;  // rows of the timestep embedding
    int vocab = 8;        // concept token vocabulary
    int n_cond = 2;       // condition tokens per prompt

    int n_tokens() const { return img * img; }
    int d_head() const { return d_model / n_heads; }

    bool operator==(const NetConfig&) const = default;
};

// Layers whose 2-D weights accept adapters: the cross-attention projections
// and the dense blocks.
inline std::vector<std::string> adapter_target_layers() {
    return {"xattn.q.w", "xattn.k.w", "xattn.v.w", "xattn.o.w",
            "ffn1.in.w", "ffn1.out.w", "ffn2.in.w", "ffn2.out.w"};
}

template <typename Real>
class DenoiserNet {
public:
    struct ForwardOptions {
        bool capture = false;  // collect cross-attention records
        bool train = false;    // retain activations for backward
        Rng* rng = nullptr;    // adapter dropout stream; dropout applies only when set
    };

    struct ForwardResult {
        std::vector<Real> eps;  // img*img, same layout as the input
        std::vector<AttentionRecord<Real>> records;
    };

    DenoiserNet() : DenoiserNet(NetConfig{}, 0) {}

    DenoiserNet(const NetConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        if (cfg.d_model % cfg.n_heads != 0) throw InputError("d_model must divide into heads");
        if (cfg.n_cond < 1 || cfg.n_cond > 8) throw InputError("n_cond must be in [1,8]");
        const int d = cfg.d_model;
        add_param("patch_embed.w", {d, 1}, init_seed, 1.0);
        add_param("patch_embed.b", {d}, init_seed, 0.0);
        add_param("pos_embed.tab", {cfg.n_tokens(), d}, init_seed, 0.3);
        add_param("time_embed.tab", {cfg.timesteps, d}, init_seed, 0.3);
        add_param("cond_embed.tab", {cfg.vocab, d}, init_seed, 1.0);
        for (const char* ln : {"ln1", "ln2", "ln3"}) {
            add_const_param(std::string(ln) + ".g", {d}, Real(1));
            add_const_param(std::string(ln) + ".b", {d}, Real(0));
        }
        for (const char* pr : {"xattn.q", "xattn.k", "xattn.v", "xattn.o"}) {
            add_param(std::string(pr) + ".w", {d, d}, init_seed, 1.0 / std::sqrt(double(d)));
            // no bias on the key projection: softmax is invariant to a shared
            // key shift, which would leave a permanently flat direction
            if (std::string(pr) != "xattn.k") add_const_param(std::string(pr) + ".b", {d}, Real(0));
        }
        for (const char* blk : {"ffn1", "ffn2"}) {
            add_param(std::string(blk) + ".in.w", {cfg.d_hidden, d}, init_seed, 1.0 / std::sqrt(double(d)));
            add_const_param(std::string(blk) + ".in.b", {cfg.d_hidden}, Real(0));
            add_param(std::string(blk) + ".out.w", {d, cfg.d_hidden}, init_seed,
                      1.0 / std::sqrt(double(cfg.d_hidden)));
            add_const_param(std::string(blk) + ".out.b", {d}, Real(0));
        }
        // Zero-init output head: the untrained net predicts exactly zero.
        add_const_param("head.w", {1, d}, Real(0));
        add_const_param("head.b", {1}, Real(0));
    }

    // Copies never carry the adapter registration or the activation tape.
    DenoiserNet(const DenoiserNet& other) : cfg_(other.cfg_), params_(other.params_) {}
    DenoiserNet& operator=(const DenoiserNet& other) {
        cfg_ = other.cfg_;
        params_ = other.params_;
        adapter_ = nullptr;
        tape_valid_ = false;
        return *this;
    }
    DenoiserNet(DenoiserNet&&) = default;
    DenoiserNet& operator=(DenoiserNet&&) = default;

    const NetConfig& config() const { return cfg_; }

    ParamTensor<Real>& param(const std::string& id) {
        auto it = params_.find(id);
        if (it == params_.end()) throw InputError("unknown layer " + id);
        return it->second;
    }
    const ParamTensor<Real>& param(const std::string& id) const {
        auto it = params_.find(id);
        if (it == params_.end()) throw InputError("unknown layer " + id);
        return it->second;
    }
    const std::map<std::string, ParamTensor<Real>>& params() const { return params_; }
    std::map<std::string, ParamTensor<Real>>& params_mutable() { return params_; }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [id, p] : params_) n += p.size();
        return n;
    }

    void set_requires_grad(bool flag) {
        for (auto& [id, p] : params_) p.requires_grad = flag;
    }

    void attach_adapter(SparseAdapter<Real>* ad) { adapter_ = ad; }
    void detach_adapter() { adapter_ = nullptr; }
    SparseAdapter<Real>* adapter() { return adapter_; }

    ForwardResult forward(const std::vector<Real>& x_t, int t, const std::vector<int>& cond,
                          const ForwardOptions& opt = {}) {
        const int N = cfg_.n_tokens();
        const int d = cfg_.d_model;
        const int M = cfg_.n_cond;
        const int H = cfg_.n_heads;
        const int dh = cfg_.d_head();
        const int hid = cfg_.d_hidden;

        if (static_cast<int>(x_t.size()) != N) throw InputError("input image has wrong shape");
        if (t < 0 || t >= cfg_.timesteps) throw InputError("timestep out of range");
        if (static_cast<int>(cond.size()) != M) throw InputError("expected " + std::to_string(M) + " condition tokens");
        for (int id : cond)
            if (id < 0 || id >= cfg_.vocab) throw VocabError("unknown concept token id " + std::to_string(id));

        Tape scratch;
        Tape& tp = opt.train ? tape_ : scratch;
        tp = Tape{};
        tp.x = x_t;
        tp.t = t;
        tp.cond = cond;

        // patch embedding + positional + timestep features
        tp.h1.resize(static_cast<size_t>(N) * d);
        {
            const auto& pw = values("patch_embed.w");
            const auto& pb = values("patch_embed.b");
            const auto& pos = values("pos_embed.tab");
            const Real* tim = values("time_embed.tab").data() + static_cast<size_t>(t) * d;
            for (int n = 0; n < N; ++n) {
                const double xv = static_cast<double>(x_t[n]);
                Real* h = tp.h1.data() + static_cast<size_t>(n) * d;
                const Real* po = pos.data() + static_cast<size_t>(n) * d;
                for (int j = 0; j < d; ++j)
                    h[j] = static_cast<Real>(static_cast<double>(pw[j]) * xv + pb[j] + po[j] + tim[j]);
            }
        }

        layernorm_fwd(tp.h1, N, "ln1", tp.xhat1, tp.rstd1, tp.y1);

        // condition embeddings
        tp.c.resize(static_cast<size_t>(M) * d);
        {
            const auto& tab = values("cond_embed.tab");
            for (int m = 0; m < M; ++m)
                std::copy_n(tab.data() + static_cast<size_t>(cond[m]) * d, d,
                            tp.c.data() + static_cast<size_t>(m) * d);
        }

        // projections (adapter-aware)
        adapted_dense(tp.y1, N, d, d, "xattn.q.w", "xattn.q.b", tp.q, tp, opt);
        adapted_dense(tp.c, M, d, d, "xattn.k.w", "", tp.k, tp, opt);
        adapted_dense(tp.c, M, d, d, "xattn.v.w", "xattn.v.b", tp.v, tp, opt);

        // scaled dot-product attention, image tokens -> condition tokens
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        tp.p.assign(static_cast<size_t>(H) * N * M, Real(0));
        std::vector<Real> attn_cat(static_cast<size_t>(N) * d);
        for (int h = 0; h < H; ++h) {
            Real* ph = tp.p.data() + static_cast<size_t>(h) * N * M;
            for (int n = 0; n < N; ++n) {
                const Real* qh = tp.q.data() + static_cast<size_t>(n) * d + h * dh;
                double s[8];  // M <= 8 in practice
                double mx = -1e300;
                for (int m = 0; m < M; ++m) {
                    const Real* kh = tp.k.data() + static_cast<size_t>(m) * d + h * dh;
                    double acc = 0.0;
                    for (int k = 0; k < dh; ++k)
                        acc += static_cast<double>(qh[k]) * static_cast<double>(kh[k]);
                    s[m] = acc * scale;
                    mx = std::max(mx, s[m]);
                }
                double z = 0.0;
                for (int m = 0; m < M; ++m) z += std::exp(s[m] - mx);
                Real* pr = ph + static_cast<size_t>(n) * M;
                for (int m = 0; m < M; ++m) pr[m] = static_cast<Real>(std::exp(s[m] - mx) / z);
                Real* oc = attn_cat.data() + static_cast<size_t>(n) * d + h * dh;
                for (int k = 0; k < dh; ++k) {
                    double acc = 0.0;
                    for (int m = 0; m < M; ++m)
                        acc += static_cast<double>(pr[m]) *
                               static_cast<double>(tp.v[static_cast<size_t>(m) * d + h * dh + k]);
                    oc[k] = static_cast<Real>(acc);
                }
            }
        }
        tp.attn_cat = std::move(attn_cat);

        std::vector<Real> attn_out;
        adapted_dense(tp.attn_cat, N, d, d, "xattn.o.w", "xattn.o.b", attn_out, tp, opt);

        tp.h2.resize(static_cast<size_t>(N) * d);
        for (size_t i = 0; i < tp.h2.size(); ++i) tp.h2[i] = tp.h1[i] + attn_out[i];

        // dense block 1
        layernorm_fwd(tp.h2, N, "ln2", tp.xhat2, tp.rstd2, tp.y2);
        adapted_dense(tp.y2, N, d, hid, "ffn1.in.w", "ffn1.in.b", tp.u1, tp, opt);
        tp.a1.resize(tp.u1.size());
        for (size_t i = 0; i < tp.u1.size(); ++i) tp.a1[i] = silu(tp.u1[i]);
        std::vector<Real> f1;
        adapted_dense(tp.a1, N, hid, d, "ffn1.out.w", "ffn1.out.b", f1, tp, opt);
        tp.h3.resize(static_cast<size_t>(N) * d);
        for (size_t i = 0; i < tp.h3.size(); ++i) tp.h3[i] = tp.h2[i] + f1[i];

        // dense block 2
        layernorm_fwd(tp.h3, N, "ln3", tp.xhat3, tp.rstd3, tp.y3);
        adapted_dense(tp.y3, N, d, hid, "ffn2.in.w", "ffn2.in.b", tp.u2, tp, opt);
        tp.a2.resize(tp.u2.size());
        for (size_t i = 0; i < tp.u2.size(); ++i) tp.a2[i] = silu(tp.u2[i]);
        std::vector<Real> f2;
        adapted_dense(tp.a2, N, hid, d, "ffn2.out.w", "ffn2.out.b", f2, tp, opt);
        tp.h4.resize(static_cast<size_t>(N) * d);
        for (size_t i = 0; i < tp.h4.size(); ++i) tp.h4[i] = tp.h3[i] + f2[i];

        ForwardResult res;
        res.eps.resize(N);
        {
            const auto& hw = values("head.w");
            const double hb = static_cast<double>(values("head.b")[0]);
            for (int n = 0; n < N; ++n) {
                const Real* h = tp.h4.data() + static_cast<size_t>(n) * d;
                double acc = hb;
                for (int j = 0; j < d; ++j) acc += static_cast<double>(hw[j]) * static_cast<double>(h[j]);
                res.eps[n] = static_cast<Real>(acc);
            }
        }

        if (opt.capture) {
            for (int h = 0; h < H; ++h) {
                AttentionRecord<Real> rec;
                rec.layer_id = "xattn";
                rec.head = h;
                rec.t = t;
                rec.rows = N;
                rec.cols = M;
                rec.weights.assign(tp.p.begin() + static_cast<size_t>(h) * N * M,
                                   tp.p.begin() + static_cast<size_t>(h + 1) * N * M);
                res.records.push_back(std::move(rec));
            }
        }

        if (opt.train) tape_valid_ = true;
        return res;
    }

    // Reverse pass for the scalar whose gradient w.r.t. eps is `upstream`.
    // Fills gradients for every requires_grad parameter; adapter A/B grads
    // accumulate into the attached adapter's buffers.
    Gradients<Real> backward(const std::vector<Real>& upstream) {
        if (!tape_valid_) throw StateError("backward called before a training forward pass");
        const Tape& tp = tape_;
        const int N = cfg_.n_tokens();
        const int d = cfg_.d_model;
        const int M = cfg_.n_cond;
        const int H = cfg_.n_heads;
        const int dh = cfg_.d_head();
        const int hid = cfg_.d_hidden;
        if (static_cast<int>(upstream.size()) != N) throw InputError("upstream has wrong shape");

        std::map<std::string, std::vector<double>> acc;  // param grads, f64

        // head
        std::vector<Real> gh4(static_cast<size_t>(N) * d, Real(0));
        {
            const auto& hw = values("head.w");
            auto& dhw = grad_buf(acc, "head.w");
            auto& dhb = grad_buf(acc, "head.b");
            for (int n = 0; n < N; ++n) {
                const double g = static_cast<double>(upstream[n]);
                dhb[0] += g;
                const Real* h = tp.h4.data() + static_cast<size_t>(n) * d;
                Real* gh = gh4.data() + static_cast<size_t>(n) * d;
                for (int j = 0; j < d; ++j) {
                    dhw[j] += g * static_cast<double>(h[j]);
                    gh[j] = static_cast<Real>(g * static_cast<double>(hw[j]));
                }
            }
        }

        // dense block 2
        std::vector<Real> ga2(static_cast<size_t>(N) * hid, Real(0));
        adapted_dense_bwd(gh4, tp.a2, N, hid, d, "ffn2.out.w", "ffn2.out.b", ga2, acc, tp);
        std::vector<Real> gu2(ga2.size());
        for (size_t i = 0; i < gu2.size(); ++i) gu2[i] = static_cast<Real>(ga2[i] * silu_grad(tp.u2[i]));
        std::vector<Real> gy3(static_cast<size_t>(N) * d, Real(0));
        adapted_dense_bwd(gu2, tp.y3, N, d, hid, "ffn2.in.w", "ffn2.in.b", gy3, acc, tp);
        std::vector<Real> gh3 = gh4;  // residual
        layernorm_bwd(gy3, tp.xhat3, tp.rstd3, N, "ln3", gh3, acc);

        // dense block 1
        std::vector<Real> ga1(static_cast<size_t>(N) * hid, Real(0));
        adapted_dense_bwd(gh3, tp.a1, N, hid, d, "ffn1.out.w", "ffn1.out.b", ga1, acc, tp);
        std::vector<Real> gu1(ga1.size());
        for (size_t i = 0; i < gu1.size(); ++i) gu1[i] = static_cast<Real>(ga1[i] * silu_grad(tp.u1[i]));
        std::vector<Real> gy2(static_cast<size_t>(N) * d, Real(0));
        adapted_dense_bwd(gu1, tp.y2, N, d, hid, "ffn1.in.w", "ffn1.in.b", gy2, acc, tp);
        std::vector<Real> gh2 = gh3;
        layernorm_bwd(gy2, tp.xhat2, tp.rstd2, N, "ln2", gh2, acc);

        // attention output projection
        std::vector<Real> gcat(static_cast<size_t>(N) * d, Real(0));
        adapted_dense_bwd(gh2, tp.attn_cat, N, d, d, "xattn.o.w", "xattn.o.b", gcat, acc, tp);

        // attention core
        std::vector<Real> gq(static_cast<size_t>(N) * d, Real(0));
        std::vector<Real> gk(static_cast<size_t>(M) * d, Real(0));
        std::vector<Real> gv(static_cast<size_t>(M) * d, Real(0));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < H; ++h) {
            const Real* ph = tp.p.data() + static_cast<size_t>(h) * N * M;
            for (int n = 0; n < N; ++n) {
                const Real* pr = ph + static_cast<size_t>(n) * M;
                const Real* go = gcat.data() + static_cast<size_t>(n) * d + h * dh;
                double gp[8];
                for (int m = 0; m < M; ++m) {
                    const Real* vh = tp.v.data() + static_cast<size_t>(m) * d + h * dh;
                    double accd = 0.0;
                    for (int k = 0; k < dh; ++k)
                        accd += static_cast<double>(go[k]) * static_cast<double>(vh[k]);
                    gp[m] = accd;
                    Real* gvh = gv.data() + static_cast<size_t>(m) * d + h * dh;
                    const double pm = static_cast<double>(pr[m]);
                    for (int k = 0; k < dh; ++k)
                        gvh[k] = static_cast<Real>(static_cast<double>(gvh[k]) + pm * static_cast<double>(go[k]));
                }
                double dotp = 0.0;
                for (int m = 0; m < M; ++m) dotp += gp[m] * static_cast<double>(pr[m]);
                Real* gqh = gq.data() + static_cast<size_t>(n) * d + h * dh;
                for (int m = 0; m < M; ++m) {
                    const double gs = static_cast<double>(pr[m]) * (gp[m] - dotp) * scale;
                    const Real* kh = tp.k.data() + static_cast<size_t>(m) * d + h * dh;
                    Real* gkh = gk.data() + static_cast<size_t>(m) * d + h * dh;
                    const Real* qh = tp.q.data() + static_cast<size_t>(n) * d + h * dh;
                    for (int k = 0; k < dh; ++k) {
                        gqh[k] = static_cast<Real>(static_cast<double>(gqh[k]) + gs * static_cast<double>(kh[k]));
                        gkh[k] = static_cast<Real>(static_cast<double>(gkh[k]) + gs * static_cast<double>(qh[k]));
                    }
                }
            }
        }

        // projections back to y1 / c
        std::vector<Real> gy1(static_cast<size_t>(N) * d, Real(0));
        adapted_dense_bwd(gq, tp.y1, N, d, d, "xattn.q.w", "xattn.q.b", gy1, acc, tp);
        std::vector<Real> gc(static_cast<size_t>(M) * d, Real(0));
        adapted_dense_bwd(gk, tp.c, M, d, d, "xattn.k.w", "", gc, acc, tp);
        adapted_dense_bwd(gv, tp.c, M, d, d, "xattn.v.w", "xattn.v.b", gc, acc, tp);

        // condition embedding scatter
        if (wants_grad("cond_embed.tab")) {
            auto& gtab = grad_buf(acc, "cond_embed.tab");
            for (int m = 0; m < M; ++m)
                for (int j = 0; j < d; ++j)
                    gtab[static_cast<size_t>(tp.cond[m]) * d + j] +=
                        static_cast<double>(gc[static_cast<size_t>(m) * d + j]);
        }

        std::vector<Real> gh1 = gh2;  // residual around attention
        layernorm_bwd(gy1, tp.xhat1, tp.rstd1, N, "ln1", gh1, acc);

        // embeddings and patch projection
        if (wants_grad("pos_embed.tab")) {
            auto& gpos = grad_buf(acc, "pos_embed.tab");
            for (size_t i = 0; i < gh1.size(); ++i) gpos[i] += static_cast<double>(gh1[i]);
        }
        if (wants_grad("time_embed.tab")) {
            auto& gtim = grad_buf(acc, "time_embed.tab");
            for (int n = 0; n < N; ++n)
                for (int j = 0; j < d; ++j)
                    gtim[static_cast<size_t>(tp.t) * d + j] +=
                        static_cast<double>(gh1[static_cast<size_t>(n) * d + j]);
        }
        if (wants_grad("patch_embed.w") || wants_grad("patch_embed.b")) {
            auto& gpw = grad_buf(acc, "patch_embed.w");
            auto& gpb = grad_buf(acc, "patch_embed.b");
            for (int n = 0; n < N; ++n) {
                const double xv = static_cast<double>(tp.x[n]);
                const Real* gh = gh1.data() + static_cast<size_t>(n) * d;
                for (int j = 0; j < d; ++j) {
                    gpw[j] += static_cast<double>(gh[j]) * xv;
                    gpb[j] += static_cast<double>(gh[j]);
                }
            }
        }

        Gradients<Real> out;
        for (auto& [id, buf] : acc) {
            std::vector<Real> g(buf.size());
            for (size_t i = 0; i < buf.size(); ++i) g[i] = static_cast<Real>(buf[i]);
            out.emplace(id, std::move(g));
        }
        return out;
    }

    bool has_tape() const { return tape_valid_; }
    void drop_tape() { tape_valid_ = false; }

private:
    struct Tape {
        std::vector<Real> x;
        int t = 0;
        std::vector<int> cond;
        std::vector<Real> h1, xhat1, rstd1, y1;
        std::vector<Real> c, q, k, v, p, attn_cat;
        std::vector<Real> h2, xhat2, rstd2, y2, u1, a1, h3, xhat3, rstd3, y3, u2, a2, h4;
        // per adapter-target layer: dropped input actually fed to the adapter
        // path, plus the applied keep-scale mask
        std::map<std::string, std::vector<Real>> adapter_in;
        std::map<std::string, std::vector<Real>> drop_scale;
    };

    NetConfig cfg_;
    std::map<std::string, ParamTensor<Real>> params_;
    SparseAdapter<Real>* adapter_ = nullptr;
    Tape tape_;
    bool tape_valid_ = false;

    const std::vector<Real>& values(const std::string& id) const { return param(id).values; }

    bool wants_grad(const std::string& id) const { return param(id).requires_grad; }

    std::vector<double>& grad_buf(std::map<std::string, std::vector<double>>& acc, const std::string& id) {
        auto [it, inserted] = acc.try_emplace(id);
        if (inserted) it->second.assign(param(id).size(), 0.0);
        return it->second;
    }

    void add_param(const std::string& id, std::vector<int> shape, uint64_t seed, double std) {
        ParamTensor<Real> p;
        p.id = id;
        p.shape = std::move(shape);
        p.values.resize(p.size());
        Rng rng(mix_seed({seed, hash_str(id)}));
        for (auto& v : p.values) v = static_cast<Real>(std * rng.gaussian());
        params_.emplace(id, std::move(p));
    }

    void add_const_param(const std::string& id, std::vector<int> shape, Real fill) {
        ParamTensor<Real> p;
        p.id = id;
        p.shape = std::move(shape);
        p.values.assign(p.size(), fill);
        params_.emplace(id, std::move(p));
    }

    // y = W x + b, plus the adapter path xd * deltaT when active. Empty bid
    // means the layer has no bias.
    void adapted_dense(const std::vector<Real>& x, int n, int in, int out, const std::string& wid,
                       const std::string& bid, std::vector<Real>& y, Tape& tp, const ForwardOptions& opt) {
        y.assign(static_cast<size_t>(n) * out, Real(0));
        dense_forward(x.data(), n, in, values(wid).data(), bid.empty() ? nullptr : values(bid).data(),
                      out, y.data());
        if (adapter_ && adapter_->active() && adapter_->targets(wid)) {
            const auto& l = adapter_->layer(wid);
            const Real* xd = x.data();
            if (opt.train) {
                auto& buf = tp.adapter_in[wid];
                buf.assign(x.begin(), x.end());
                if (opt.rng && l.dropout > 0.0) {
                    auto& sc = tp.drop_scale[wid];
                    sc.resize(x.size());
                    const Real keep = static_cast<Real>(1.0 / (1.0 - l.dropout));
                    for (size_t i = 0; i < buf.size(); ++i) {
                        const bool drop = opt.rng->bernoulli(l.dropout);
                        sc[i] = drop ? Real(0) : keep;
                        buf[i] *= sc[i];
                    }
                }
                xd = buf.data();
            }
            const auto& delta = l.delta();
            for (int r = 0; r < n; ++r) {
                const Real* xr = xd + static_cast<size_t>(r) * in;
                Real* yr = y.data() + static_cast<size_t>(r) * out;
                for (int o = 0; o < out; ++o) {
                    const Real* dr = delta.data() + static_cast<size_t>(o) * in;
                    double accd = static_cast<double>(yr[o]);
                    for (int i = 0; i < in; ++i)
                        accd += static_cast<double>(dr[i]) * static_cast<double>(xr[i]);
                    yr[o] = static_cast<Real>(accd);
                }
            }
        }
    }

    // Reverse of adapted_dense. gx accumulates; W/b grads go to acc when the
    // base layer wants them; A/B grads accumulate into the adapter.
    void adapted_dense_bwd(const std::vector<Real>& gy, const std::vector<Real>& x, int n, int in, int out,
                           const std::string& wid, const std::string& bid, std::vector<Real>& gx,
                           std::map<std::string, std::vector<double>>& acc, const Tape& tp) {
        const bool has_bias = !bid.empty();
        if (wants_grad(wid) || (has_bias && wants_grad(bid))) {
            dense_param_grad(gy.data(), x.data(), n, in, out, grad_buf(acc, wid).data(),
                             has_bias ? grad_buf(acc, bid).data() : nullptr);
        }
        dense_input_grad(gy.data(), values(wid).data(), n, in, out, gx.data());

        if (adapter_ && adapter_->active() && adapter_->targets(wid)) {
            auto& l = adapter_->layer(wid);
            auto it = tp.adapter_in.find(wid);
            const std::vector<Real>& xd = it != tp.adapter_in.end() ? it->second : x;
            // G = gy^T * xd, then scaled and masked once
            std::vector<double> gmask(static_cast<size_t>(out) * in, 0.0);
            dense_param_grad(gy.data(), xd.data(), n, in, out, gmask.data(), nullptr);
            const double scale = l.alpha / l.rank;
            for (size_t oi = 0; oi < gmask.size(); ++oi)
                gmask[oi] = (!l.mask.empty() && l.mask[oi] == 0) ? 0.0 : gmask[oi] * scale;
            // dB[o][k] += sum_i Gm[o][i] * A[k][i];  dA[k][i] += sum_o B[o][k] * Gm[o][i]
            for (int o = 0; o < out; ++o) {
                const double* gmo = gmask.data() + static_cast<size_t>(o) * in;
                for (int k = 0; k < l.rank; ++k) {
                    const Real* ak = l.a.data() + static_cast<size_t>(k) * in;
                    double accb = 0.0;
                    for (int i = 0; i < in; ++i) accb += gmo[i] * static_cast<double>(ak[i]);
                    auto& gb = l.grad_b[static_cast<size_t>(o) * l.rank + k];
                    gb = static_cast<Real>(static_cast<double>(gb) + accb);
                }
            }
            for (int k = 0; k < l.rank; ++k) {
                Real* gak = l.grad_a.data() + static_cast<size_t>(k) * in;
                for (int o = 0; o < out; ++o) {
                    const double bok = static_cast<double>(l.b[static_cast<size_t>(o) * l.rank + k]);
                    if (bok == 0.0) continue;
                    const double* gmo = gmask.data() + static_cast<size_t>(o) * in;
                    for (int i = 0; i < in; ++i)
                        gak[i] = static_cast<Real>(static_cast<double>(gak[i]) + bok * gmo[i]);
                }
            }
            // input gradient through the adapter path (and its dropout)
            const auto& delta = l.delta();
            auto itd = tp.drop_scale.find(wid);
            for (int r = 0; r < n; ++r) {
                const Real* gr = gy.data() + static_cast<size_t>(r) * out;
                Real* gxr = gx.data() + static_cast<size_t>(r) * in;
                for (int i = 0; i < in; ++i) {
                    double accd = 0.0;
                    for (int o = 0; o < out; ++o)
                        accd += static_cast<double>(gr[o]) *
                                static_cast<double>(delta[static_cast<size_t>(o) * in + i]);
                    if (itd != tp.drop_scale.end())
                        accd *= static_cast<double>(itd->second[static_cast<size_t>(r) * in + i]);
                    gxr[i] = static_cast<Real>(static_cast<double>(gxr[i]) + accd);
                }
            }
        }
    }

    void layernorm_fwd(const std::vector<Real>& x, int n, const std::string& ln, std::vector<Real>& xhat,
                       std::vector<Real>& rstd, std::vector<Real>& y) {
        const int d = cfg_.d_model;
        const auto& g = values(ln + ".g");
        const auto& b = values(ln + ".b");
        xhat.resize(static_cast<size_t>(n) * d);
        rstd.resize(n);
        y.resize(static_cast<size_t>(n) * d);
        for (int r = 0; r < n; ++r) {
            const Real* xr = x.data() + static_cast<size_t>(r) * d;
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += static_cast<double>(xr[j]);
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = static_cast<double>(xr[j]) - mean;
                var += c * c;
            }
            var /= d;
            const double rs = 1.0 / std::sqrt(var + 1e-5);
            rstd[r] = static_cast<Real>(rs);
            Real* xh = xhat.data() + static_cast<size_t>(r) * d;
            Real* yr = y.data() + static_cast<size_t>(r) * d;
            for (int j = 0; j < d; ++j) {
                xh[j] = static_cast<Real>((static_cast<double>(xr[j]) - mean) * rs);
                yr[j] = static_cast<Real>(static_cast<double>(g[j]) * static_cast<double>(xh[j]) +
                                          static_cast<double>(b[j]));
            }
        }
    }

    void layernorm_bwd(const std::vector<Real>& gy, const std::vector<Real>& xhat,
                       const std::vector<Real>& rstd, int n, const std::string& ln, std::vector<Real>& gx,
                       std::map<std::string, std::vector<double>>& acc) {
        const int d = cfg_.d_model;
        const auto& g = values(ln + ".g");
        const bool want = wants_grad(ln + ".g") || wants_grad(ln + ".b");
        double* gg = nullptr;
        double* gb = nullptr;
        if (want) {
            gg = grad_buf(acc, ln + ".g").data();
            gb = grad_buf(acc, ln + ".b").data();
        }
        for (int r = 0; r < n; ++r) {
            const Real* gyr = gy.data() + static_cast<size_t>(r) * d;
            const Real* xh = xhat.data() + static_cast<size_t>(r) * d;
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dxh = static_cast<double>(gyr[j]) * static_cast<double>(g[j]);
                m1 += dxh;
                m2 += dxh * static_cast<double>(xh[j]);
                if (want) {
                    gg[j] += static_cast<double>(gyr[j]) * static_cast<double>(xh[j]);
                    gb[j] += static_cast<double>(gyr[j]);
                }
            }
            m1 /= d;
            m2 /= d;
            const double rs = static_cast<double>(rstd[r]);
            Real* gxr = gx.data() + static_cast<size_t>(r) * d;
            for (int j = 0; j < d; ++j) {
                const double dxh = static_cast<double>(gyr[j]) * static_cast<double>(g[j]);
                gxr[j] = static_cast<Real>(static_cast<double>(gxr[j]) +
                                           rs * (dxh - m1 - static_cast<double>(xh[j]) * m2));
            }
        }
    }
};

using DenoiserNetF = DenoiserNet<float>;
using DenoiserNetD = DenoiserNet<double>;

// Exact-width copy of a float net into a double net (for oracle checks).
inline DenoiserNetD widen(const DenoiserNetF& net) {
    DenoiserNetD out(net.config(), 0);
    for (const auto& [id, p] : net.params()) {
        auto& q = out.param(id);
        for (size_t i = 0; i < p.values.size(); ++i) q.values[i] = static_cast<double>(p.values[i]);
        q.requires_grad = p.requires_grad;
    }
    return out;
}

inline SparseAdapterD widen(const SparseAdapterF& ad) {
    SparseAdapterD out;
    out.enabled = ad.enabled;
    out.merged = ad.merged;
    for (const auto& [id, l] : ad.layers) {
        AdapterLayer<double> w;
        w.layer_id = l.layer_id;
        w.out = l.out;
        w.in = l.in;
        w.rank = l.rank;
        w.alpha = l.alpha;
        w.dropout = l.dropout;
        w.a.assign(l.a.begin(), l.a.end());
        w.b.assign(l.b.begin(), l.b.end());
        w.mask = l.mask;
        w.grad_a.assign(w.a.size(), 0.0);
        w.grad_b.assign(w.b.size(), 0.0);
        out.layers.emplace(id, std::move(w));
    }
    return out;
}

// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12),
// central differences on the scalar L = sum(u .* eps). Covers net parameters
// and, when an adapter is attached, its A/B matrices through the masked path.
template <typename Real>
double grad_check(DenoiserNet<Real>& net, const std::vector<Real>& x, int t, const std::vector<int>& cond,
                  double h, uint64_t seed, int n_threads = 1) {
    if (h <= 0.0) throw InputError("grad_check requires a positive step h");
    if (net.param_count() >= 100000) throw InputError("grad_check net too large to enumerate");

    const int n = net.config().n_tokens();
    std::vector<double> u(n);
    Rng rng(mix_seed({seed, 0xfd17}));
    for (auto& v : u) v = rng.gaussian();

    const auto loss_of = [&](DenoiserNet<Real>& m) {
        auto res = m.forward(x, t, cond, {});
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += u[i] * static_cast<double>(res.eps[i]);
        return acc;
    };

    // analytic pass
    SparseAdapter<Real>* ad = net.adapter();
    if (ad) ad->zero_grads();
    typename DenoiserNet<Real>::ForwardOptions fo;
    fo.train = true;
    net.forward(x, t, cond, fo);
    std::vector<Real> up(n);
    for (int i = 0; i < n; ++i) up[i] = static_cast<Real>(u[i]);
    Gradients<Real> analytic = net.backward(up);

    // flat list of (kind, id, index, analytic value)
    struct Entry {
        int kind;  // 0 = net param, 1 = lora A, 2 = lora B
        std::string id;
        size_t index;
        double analytic;
    };
    std::vector<Entry> entries;
    for (const auto& [id, g] : analytic)
        for (size_t i = 0; i < g.size(); ++i) entries.push_back({0, id, i, static_cast<double>(g[i])});
    if (ad) {
        for (const auto& [id, l] : ad->layers) {
            for (size_t i = 0; i < l.grad_a.size(); ++i)
                entries.push_back({1, id, i, static_cast<double>(l.grad_a[i])});
            for (size_t i = 0; i < l.grad_b.size(); ++i)
                entries.push_back({2, id, i, static_cast<double>(l.grad_b[i])});
        }
    }

    const int workers = std::max(1, n_threads);
    std::vector<double> worst(workers, 0.0);
    auto run_slice = [&](int w) {
        DenoiserNet<Real> local(net);
        SparseAdapter<Real> local_ad;
        if (ad) {
            local_ad = *ad;
            local.attach_adapter(&local_ad);
        }
        double worst_local = 0.0;
        for (size_t e = w; e < entries.size(); e += static_cast<size_t>(workers)) {
            const Entry& en = entries[e];
            Real* slot = nullptr;
            if (en.kind == 0) slot = &local.param(en.id).values[en.index];
            else if (en.kind == 1) slot = &local_ad.layer(en.id).a[en.index];
            else slot = &local_ad.layer(en.id).b[en.index];
            const Real orig = *slot;
            // 5-point central stencil: O(h^4) truncation
            const auto eval_at = [&](double offset) {
                *slot = static_cast<Real>(static_cast<double>(orig) + offset);
                if (en.kind != 0) local_ad.invalidate_deltas();
                return loss_of(local);
            };
            const double l2p = eval_at(2.0 * h);
            const double l1p = eval_at(h);
            const double l1m = eval_at(-h);
            const double l2m = eval_at(-2.0 * h);
            *slot = orig;
            if (en.kind != 0) local_ad.invalidate_deltas();
            // differences first, so untouched parameters cancel exactly
            const double numeric = (8.0 * (l1p - l1m) - (l2p - l2m)) / (12.0 * h);
            const double rel = std::abs(en.analytic - numeric) /
                               std::max({std::abs(en.analytic), std::abs(numeric), 1e-12});
            worst_local = std::max(worst_local, rel);
        }
        worst[w] = worst_local;
    };
    if (workers == 1) {
        run_slice(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run_slice, w);
        for (auto& th : pool) th.join();
    }
    return *std::max_element(worst.begin(), worst.end());
}

}  // namespace fade
