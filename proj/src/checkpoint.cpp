#include "fade/checkpoint.hpp"

#include "fade/io.hpp"

namespace fade {

namespace {
constexpr char kMagic[4] = {'F', 'D', 'N', 'T'};
constexpr uint16_t kVersion = 1;
}  // namespace

void save_checkpoint(const DenoiserNetF& net, const std::string& path) {
    BinWriter w(path);
    w.bytes(kMagic, 4);
    w.pod<uint16_t>(kVersion);
    const NetConfig& c = net.config();
    for (int v : {c.img, c.d_model, c.n_heads, c.d_hidden, c.timesteps, c.vocab, c.n_cond})
        w.pod<int32_t>(v);
    w.pod<uint32_t>(static_cast<uint32_t>(net.params().size()));
    for (const auto& [id, p] : net.params()) {
        w.str(id);
        w.pod<uint8_t>(static_cast<uint8_t>(p.shape.size()));
        for (int d : p.shape) w.pod<int64_t>(d);
        w.vec(p.values);
    }
    w.close();
}

DenoiserNetF load_checkpoint(const std::string& path) {
    BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4)) throw IoError(path + ": not a network checkpoint");
    const uint16_t version = r.pod<uint16_t>();
    if (version != kVersion) throw IoError(path + ": unsupported checkpoint version");
    NetConfig c;
    c.img = r.pod<int32_t>();
    c.d_model = r.pod<int32_t>();
    c.n_heads = r.pod<int32_t>();
    c.d_hidden = r.pod<int32_t>();
    c.timesteps = r.pod<int32_t>();
    c.vocab = r.pod<int32_t>();
    c.n_cond = r.pod<int32_t>();
    DenoiserNetF net(c, 0);
    const uint32_t count = r.pod<uint32_t>();
    if (count != net.params().size()) throw IoError(path + ": layer count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        const std::string id = r.str();
        auto& p = net.param(id);  // throws InputError for unknown layers
        const uint8_t rank = r.pod<uint8_t>();
        if (rank != p.shape.size()) throw IoError(path + ": shape rank mismatch on " + id);
        for (int d : p.shape)
            if (r.pod<int64_t>() != d) throw IoError(path + ": shape mismatch on " + id);
        p.values = r.vec<float>(p.values.size());
    }
    return net;
}

}  // namespace fade
