#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fade/errors.hpp"
#include "fade/linalg.hpp"
#include "fade/masks.hpp"
#include "fade/rng.hpp"

namespace fade {

struct LoraConfig {
    int rank = 4;
    double alpha = 4.0;
    double dropout = 0.2;
    uint64_t init_seed = 0;
};

// One wrapped layer: trainable (A, B) beside a frozen base weight, with an
// optional binary mask constraining the product. The effective update is
// (alpha/r) * (B A) (.) M, recomputed lazily whenever A or B change.
template <typename Real>
struct AdapterLayer {
    std::string layer_id;
    int out = 0;
    int in = 0;
    int rank = 0;
    double alpha = 0.0;
    double dropout = 0.0;
    std::vector<Real> a;        // rank x in
    std::vector<Real> b;        // out x rank
    std::vector<uint8_t> mask;  // out*in of {0,1}; empty means all-ones

    std::vector<Real> grad_a;  // accumulated by backward, consumed by the optimizer
    std::vector<Real> grad_b;

    mutable std::vector<Real> delta_cache;  // out x in
    mutable bool delta_valid = false;

    const std::vector<Real>& delta() const {
        if (!delta_valid) {
            delta_cache.assign(static_cast<size_t>(out) * in, Real(0));
            const double scale = alpha / rank;
            for (int o = 0; o < out; ++o) {
                for (int i = 0; i < in; ++i) {
                    const size_t oi = static_cast<size_t>(o) * in + i;
                    if (!mask.empty() && mask[oi] == 0) continue;
                    double acc = 0.0;
                    for (int k = 0; k < rank; ++k)
                        acc += static_cast<double>(b[static_cast<size_t>(o) * rank + k]) *
                               static_cast<double>(a[static_cast<size_t>(k) * in + i]);
                    delta_cache[oi] = static_cast<Real>(scale * acc);
                }
            }
            delta_valid = true;
        }
        return delta_cache;
    }
};

template <typename Real>
class SparseAdapter {
public:
    std::map<std::string, AdapterLayer<Real>> layers;
    bool enabled = true;
    bool merged = false;

    bool targets(const std::string& layer_id) const { return layers.count(layer_id) != 0; }

    AdapterLayer<Real>& layer(const std::string& layer_id) {
        auto it = layers.find(layer_id);
        if (it == layers.end()) throw InputError("adapter does not target layer " + layer_id);
        return it->second;
    }
    const AdapterLayer<Real>& layer(const std::string& layer_id) const {
        auto it = layers.find(layer_id);
        if (it == layers.end()) throw InputError("adapter does not target layer " + layer_id);
        return it->second;
    }

    // (alpha/r) * (B A) (.) M for one layer. Dropout is train-time only and
    // never part of the delta.
    std::vector<Real> effective_delta(const std::string& layer_id) const {
        return layer(layer_id).delta();
    }

    // O(1): a flag flip, no weight copies.
    void set_enabled(bool flag) { enabled = flag; }

    // True when forwards should add the adapter path.
    bool active() const { return enabled && !merged; }

    void invalidate_deltas() {
        for (auto& [id, l] : layers) l.delta_valid = false;
    }

    void zero_grads() {
        for (auto& [id, l] : layers) {
            l.grad_a.assign(l.a.size(), Real(0));
            l.grad_b.assign(l.b.size(), Real(0));
        }
    }

    // Views keyed "<layer_id>/lora_a|lora_b" for the optimizer and clipping.
    std::map<std::string, std::vector<Real>*> param_view() {
        std::map<std::string, std::vector<Real>*> v;
        for (auto& [id, l] : layers) {
            v[id + "/lora_a"] = &l.a;
            v[id + "/lora_b"] = &l.b;
        }
        return v;
    }
    std::map<std::string, std::vector<Real>*> grad_view() {
        std::map<std::string, std::vector<Real>*> v;
        for (auto& [id, l] : layers) {
            v[id + "/lora_a"] = &l.grad_a;
            v[id + "/lora_b"] = &l.grad_b;
        }
        return v;
    }

    int64_t trainable_params() const {
        int64_t n = 0;
        for (const auto& [id, l] : layers) n += static_cast<int64_t>(l.a.size() + l.b.size());
        return n;
    }
};

// Wire an adapter to a net's 2-D layers. A ~ N(0, 1/r), B = 0, so the initial
// update is exactly zero. Returned by unique_ptr so the registered address
// stays stable.
template <typename Real, typename Net>
std::unique_ptr<SparseAdapter<Real>> attach(Net& net, const std::vector<std::string>& target_layer_ids,
                                            const LoraConfig& cfg, const BinaryMask* mask = nullptr) {
    if (cfg.rank < 1) throw InputError("adapter rank must be >= 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw InputError("adapter dropout must be in [0,1)");
    auto ad = std::make_unique<SparseAdapter<Real>>();
    for (const std::string& id : target_layer_ids) {
        const auto& p = net.param(id);
        if (p.shape.size() != 2)
            throw InputError("adapter target " + id + " is not a 2-D weight");
        AdapterLayer<Real> l;
        l.layer_id = id;
        l.out = p.shape[0];
        l.in = p.shape[1];
        if (cfg.rank > std::min(l.out, l.in))
            throw InputError("adapter rank " + std::to_string(cfg.rank) + " exceeds min dimension of " + id);
        l.rank = cfg.rank;
        l.alpha = cfg.alpha;
        l.dropout = cfg.dropout;
        l.a.resize(static_cast<size_t>(l.rank) * l.in);
        l.b.assign(static_cast<size_t>(l.out) * l.rank, Real(0));
        Rng rng(mix_seed({cfg.init_seed, hash_str(id), 0x10ad}));
        const double std_a = 1.0 / std::sqrt(static_cast<double>(cfg.rank));
        for (auto& v : l.a) v = static_cast<Real>(std_a * rng.gaussian());
        if (mask) {
            auto it = mask->bits.find(id);
            if (it == mask->bits.end()) throw InputError("mask missing layer " + id);
            if (static_cast<int64_t>(it->second.size()) != static_cast<int64_t>(l.out) * l.in)
                throw InputError("mask shape mismatch on layer " + id);
            l.mask = it->second;
        }
        l.grad_a.assign(l.a.size(), Real(0));
        l.grad_b.assign(l.b.size(), Real(0));
        ad->layers.emplace(id, std::move(l));
    }
    net.attach_adapter(ad.get());
    return ad;
}

// Fold the adapter delta into the base weights (and back). The same cached
// delta is used on both sides, arithmetic widened to double per entry.
template <typename Real, typename Net>
void merge(Net& net, SparseAdapter<Real>& ad) {
    if (ad.merged) throw StateError("adapter already merged");
    for (auto& [id, l] : ad.layers) {
        auto& w = net.param(id).values;
        const auto& d = l.delta();
        for (size_t i = 0; i < w.size(); ++i)
            w[i] = static_cast<Real>(static_cast<double>(w[i]) + static_cast<double>(d[i]));
    }
    ad.merged = true;
}

template <typename Real, typename Net>
void unmerge(Net& net, SparseAdapter<Real>& ad) {
    if (!ad.merged) throw StateError("adapter is not merged");
    for (auto& [id, l] : ad.layers) {
        auto& w = net.param(id).values;
        const auto& d = l.delta();
        for (size_t i = 0; i < w.size(); ++i)
            w[i] = static_cast<Real>(static_cast<double>(w[i]) - static_cast<double>(d[i]));
    }
    ad.merged = false;
}

using SparseAdapterF = SparseAdapter<float>;
using SparseAdapterD = SparseAdapter<double>;

// Adapter file IO (float payload on disk). Declared here, defined in
// adapter_io.cpp.
void save_adapter(const SparseAdapterF& ad, const std::string& path);
SparseAdapterF load_adapter_file(const std::string& path);

// Validates shapes against the net before handing the adapter out.
template <typename Net>
std::unique_ptr<SparseAdapterF> load_adapter(const std::string& path, Net& net) {
    auto ad = std::make_unique<SparseAdapterF>(load_adapter_file(path));
    for (auto& [id, l] : ad->layers) {
        const auto& p = net.param(id);  // throws InputError when the layer is unknown
        if (p.shape.size() != 2 || p.shape[0] != l.out || p.shape[1] != l.in)
            throw InputError("adapter layer " + id + " does not match network shape");
    }
    net.attach_adapter(ad.get());
    return ad;
}

}  // namespace fade
