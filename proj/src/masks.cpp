#include "fade/masks.hpp"

#include <numeric>
#include <tuple>

#include "fade/io.hpp"

namespace fade {

BinaryMask threshold_mask(const SaliencyMap& sal, double gamma) {
    if (gamma < 0.0) throw InputError("threshold gamma must be >= 0");
    BinaryMask m;
    m.granularity = MaskGranularity::PerWeight;
    for (const auto& [id, v] : sal) {
        std::vector<uint8_t> bits(v.size());
        for (size_t i = 0; i < v.size(); ++i) bits[i] = static_cast<double>(v[i]) > gamma ? 1 : 0;
        m.bits.emplace(id, std::move(bits));
    }
    return m;
}

BinaryMask topq_mask(const SaliencyMap& sal, double q) {
    if (q < 0.0 || q > 1.0) throw InputError("Q must be in [0,1]");
    BinaryMask m;
    m.granularity = MaskGranularity::PerWeight;
    int64_t total = 0;
    for (const auto& [id, v] : sal) {
        m.bits.emplace(id, std::vector<uint8_t>(v.size(), 0));
        total += static_cast<int64_t>(v.size());
    }
    const int64_t keep = static_cast<int64_t>(q * static_cast<double>(total));
    if (keep == 0) return m;
    // global ranking; ties broken by (layer_id, flat index) ascending
    std::vector<std::tuple<float, const std::string*, size_t>> order;
    order.reserve(static_cast<size_t>(total));
    for (const auto& [id, v] : sal)
        for (size_t i = 0; i < v.size(); ++i) order.emplace_back(v[i], &id, i);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        if (*std::get<1>(a) != *std::get<1>(b)) return *std::get<1>(a) < *std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
    });
    for (int64_t k = 0; k < keep; ++k)
        m.bits[*std::get<1>(order[static_cast<size_t>(k)])][std::get<2>(order[static_cast<size_t>(k)])] = 1;
    return m;
}

BinaryMask block_mask(const SaliencyMap& sal, double q, BlockSpec spec,
                      const std::map<std::string, std::vector<int>>& shapes) {
    if (q < 0.0 || q > 1.0) throw InputError("Q must be in [0,1]");
    struct Block {
        const std::string* id;
        size_t begin, end;  // flat range within the layer
        double mean;
    };
    std::vector<Block> blocks;
    BinaryMask m;
    m.granularity = MaskGranularity::PerBlock;
    for (const auto& [id, v] : sal) {
        m.bits.emplace(id, std::vector<uint8_t>(v.size(), 0));
        auto it = shapes.find(id);
        if (it == shapes.end()) throw InputError("block_mask: missing shape for layer " + id);
        int64_t n = 1;
        for (int d : it->second) n *= d;
        if (n != static_cast<int64_t>(v.size()))
            throw InputError("block_mask: shape does not cover layer " + id);
        size_t block_len = v.size();
        if (spec == BlockSpec::PerOutputRow && it->second.size() == 2)
            block_len = static_cast<size_t>(it->second[1]);
        for (size_t b = 0; b < v.size(); b += block_len) {
            const size_t e = std::min(v.size(), b + block_len);
            double acc = 0.0;
            for (size_t i = b; i < e; ++i) acc += static_cast<double>(v[i]);
            blocks.push_back({&id, b, e, acc / static_cast<double>(e - b)});
        }
    }
    std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) {
        if (a.mean != b.mean) return a.mean > b.mean;
        if (*a.id != *b.id) return *a.id < *b.id;
        return a.begin < b.begin;
    });
    const int64_t keep = static_cast<int64_t>(q * static_cast<double>(blocks.size()));
    for (int64_t k = 0; k < keep; ++k) {
        const Block& b = blocks[static_cast<size_t>(k)];
        auto& bits = m.bits[*b.id];
        for (size_t i = b.begin; i < b.end; ++i) bits[i] = 1;
    }
    return m;
}

OverlapStats mask_overlap(const BinaryMask& mf, const BinaryMask& mo) {
    if (mf.bits.size() != mo.bits.size()) throw InputError("mask_overlap: layer coverage differs");
    OverlapStats st;
    auto it_f = mf.bits.begin();
    auto it_o = mo.bits.begin();
    for (; it_f != mf.bits.end(); ++it_f, ++it_o) {
        if (it_f->first != it_o->first || it_f->second.size() != it_o->second.size())
            throw InputError("mask_overlap: shape mismatch on layer " + it_f->first);
        for (size_t i = 0; i < it_f->second.size(); ++i) {
            const bool a = it_f->second[i] != 0;
            const bool b = it_o->second[i] != 0;
            st.count_a += a;
            st.count_b += b;
            st.intersection += a && b;
            st.union_count += a || b;
        }
    }
    st.jaccard = st.union_count == 0 ? 0.0
                                     : static_cast<double>(st.intersection) / static_cast<double>(st.union_count);
    st.frac_a_in_b = st.count_a == 0 ? 0.0
                                     : static_cast<double>(st.intersection) / static_cast<double>(st.count_a);
    return st;
}

namespace {
constexpr char kMaskMagic[4] = {'F', 'M', 'S', 'K'};
constexpr uint16_t kMaskVersion = 1;
}  // namespace

void save_mask(const std::string& path, const BinaryMask& mask, const MaskFileMeta& meta,
               const std::map<std::string, std::vector<int>>& shapes) {
    BinWriter w(path);
    w.bytes(kMaskMagic, 4);
    w.pod<uint16_t>(kMaskVersion);
    w.pod<uint8_t>(static_cast<uint8_t>(mask.granularity));
    w.pod<uint8_t>(meta.selection_kind);
    w.pod<double>(meta.selection_param);
    w.pod<uint64_t>(meta.dataset_fingerprint);
    w.pod<uint32_t>(static_cast<uint32_t>(mask.bits.size()));
    for (const auto& [id, bits] : mask.bits) {
        w.str(id);
        auto it = shapes.find(id);
        if (it == shapes.end()) throw InputError("save_mask: missing shape for layer " + id);
        w.pod<uint8_t>(static_cast<uint8_t>(it->second.size()));
        for (int d : it->second) w.pod<int64_t>(d);
        std::vector<uint8_t> packed((bits.size() + 7) / 8, 0);
        for (size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) packed[i >> 3] |= static_cast<uint8_t>(1u << (i & 7));
        w.vec(packed);
    }
    w.close();
}

BinaryMask load_mask(const std::string& path, MaskFileMeta* meta_out,
                     std::map<std::string, std::vector<int>>* shapes_out) {
    BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMaskMagic, 4)) throw IoError(path + ": not a mask file");
    if (r.pod<uint16_t>() != kMaskVersion) throw IoError(path + ": unsupported mask version");
    BinaryMask m;
    MaskFileMeta meta;
    m.granularity = static_cast<MaskGranularity>(r.pod<uint8_t>());
    meta.granularity = m.granularity;
    meta.selection_kind = r.pod<uint8_t>();
    meta.selection_param = r.pod<double>();
    meta.dataset_fingerprint = r.pod<uint64_t>();
    const uint32_t layers = r.pod<uint32_t>();
    for (uint32_t l = 0; l < layers; ++l) {
        const std::string id = r.str();
        const uint8_t rank = r.pod<uint8_t>();
        std::vector<int> shape(rank);
        int64_t n = 1;
        for (int k = 0; k < rank; ++k) {
            shape[k] = static_cast<int>(r.pod<int64_t>());
            n *= shape[k];
        }
        const auto packed = r.vec<uint8_t>(static_cast<size_t>((n + 7) / 8));
        std::vector<uint8_t> bits(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            bits[static_cast<size_t>(i)] = (packed[static_cast<size_t>(i >> 3)] >> (i & 7)) & 1u;
        m.bits.emplace(id, std::move(bits));
        if (shapes_out) (*shapes_out)[id] = shape;
    }
    if (meta_out) *meta_out = meta;
    return m;
}

}  // namespace fade
