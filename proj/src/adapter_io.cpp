#include "fade/adapter.hpp"

#include "fade/io.hpp"

namespace fade {

namespace {
constexpr char kAdapterMagic[4] = {'F', 'A', 'D', 'E'};
constexpr uint16_t kAdapterVersion = 1;
}  // namespace

void save_adapter(const SparseAdapterF& ad, const std::string& path) {
    BinWriter w(path);
    w.bytes(kAdapterMagic, 4);
    w.pod<uint16_t>(kAdapterVersion);
    w.pod<uint8_t>(ad.enabled ? 1 : 0);
    w.pod<uint32_t>(static_cast<uint32_t>(ad.layers.size()));
    for (const auto& [id, l] : ad.layers) {
        w.str(id);
        w.pod<uint32_t>(static_cast<uint32_t>(l.rank));
        w.pod<float>(static_cast<float>(l.alpha));
        w.pod<float>(static_cast<float>(l.dropout));
        w.pod<int64_t>(l.out);
        w.pod<int64_t>(l.in);
        w.vec(l.a);
        w.vec(l.b);
        w.pod<uint8_t>(l.mask.empty() ? 0 : 1);
        if (!l.mask.empty()) {
            std::vector<uint8_t> packed((l.mask.size() + 7) / 8, 0);
            for (size_t i = 0; i < l.mask.size(); ++i)
                if (l.mask[i]) packed[i >> 3] |= static_cast<uint8_t>(1u << (i & 7));
            w.vec(packed);
        }
    }
    w.close();
}

SparseAdapterF load_adapter_file(const std::string& path) {
    BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kAdapterMagic, 4))
        throw IoError(path + ": not an adapter file (bad magic)");
    if (r.pod<uint16_t>() != kAdapterVersion) throw IoError(path + ": unsupported adapter version");
    SparseAdapterF ad;
    ad.enabled = r.pod<uint8_t>() != 0;
    const uint32_t layers = r.pod<uint32_t>();
    for (uint32_t i = 0; i < layers; ++i) {
        AdapterLayer<float> l;
        l.layer_id = r.str();
        l.rank = static_cast<int>(r.pod<uint32_t>());
        l.alpha = r.pod<float>();
        l.dropout = r.pod<float>();
        l.out = static_cast<int>(r.pod<int64_t>());
        l.in = static_cast<int>(r.pod<int64_t>());
        if (l.rank < 1 || l.out < 1 || l.in < 1) throw IoError(path + ": corrupt adapter header");
        l.a = r.vec<float>(static_cast<size_t>(l.rank) * l.in);
        l.b = r.vec<float>(static_cast<size_t>(l.out) * l.rank);
        if (r.pod<uint8_t>() != 0) {
            const size_t n = static_cast<size_t>(l.out) * l.in;
            const auto packed = r.vec<uint8_t>((n + 7) / 8);
            l.mask.resize(n);
            for (size_t k = 0; k < n; ++k) l.mask[k] = (packed[k >> 3] >> (k & 7)) & 1u;
        }
        l.grad_a.assign(l.a.size(), 0.0f);
        l.grad_b.assign(l.b.size(), 0.0f);
        ad.layers.emplace(l.layer_id, std::move(l));
    }
    return ad;
}

}  // namespace fade
