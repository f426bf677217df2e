#include "fade/dataset.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "fade/io.hpp"
#include "fade/rng.hpp"

namespace fade {

namespace {

const char* kShapeNames[kNumShapes] = {"circle", "square", "triangle", "cross"};
// Palettes are (background, foreground) intensity pairs.
const char* kPaletteNames[kNumPalettes] = {"night", "paper", "slate", "fog"};
const float kPaletteBg[kNumPalettes] = {0.10f, 0.90f, 0.30f, 0.65f};
const float kPaletteFg[kNumPalettes] = {0.90f, 0.10f, 0.65f, 0.30f};

struct Jitter {
    double cx, cy, scale, rot, bg, fg;
};

bool inside_shape(int shape, double u, double v, double s) {
    switch (shape) {
        case 0:  // circle
            return u * u + v * v <= (4.4 * s) * (4.4 * s);
        case 1:  // square
            return std::max(std::abs(u), std::abs(v)) <= 3.6 * s;
        case 2: {  // equilateral triangle, apex up
            const double R = 4.9 * s;
            // vertices at angles 90, 210, 330 degrees (y axis points down on canvas)
            const double ax = 0.0, ay = -R;
            const double bx = -R * 0.8660254037844386, by = R * 0.5;
            const double cx = R * 0.8660254037844386, cy = R * 0.5;
            const auto side = [](double x1, double y1, double x2, double y2, double px, double py) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            const double d1 = side(ax, ay, bx, by, u, v);
            const double d2 = side(bx, by, cx, cy, u, v);
            const double d3 = side(cx, cy, ax, ay, u, v);
            const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
            const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
            return !(has_neg && has_pos);
        }
        case 3: {  // plus sign
            const double arm = 4.6 * s, bar = 1.35 * s;
            return (std::abs(u) <= bar && std::abs(v) <= arm) ||
                   (std::abs(v) <= bar && std::abs(u) <= arm);
        }
        default:
            throw InputError("unknown shape id");
    }
}

std::vector<float> render(int img, int shape, const Jitter& j) {
    std::vector<float> pix(static_cast<size_t>(img) * img);
    const double unit = static_cast<double>(img) / 16.0;  // geometry defined on a 16px canvas
    const double cr = std::cos(j.rot), sr = std::sin(j.rot);
    for (int y = 0; y < img; ++y) {
        for (int x = 0; x < img; ++x) {
            int hit = 0;
            for (int sy = 0; sy < 3; ++sy) {
                for (int sx = 0; sx < 3; ++sx) {
                    const double px = x + (sx + 0.5) / 3.0 - j.cx;
                    const double py = y + (sy + 0.5) / 3.0 - j.cy;
                    const double u = (cr * px + sr * py) / unit;
                    const double v = (-sr * px + cr * py) / unit;
                    if (inside_shape(shape, u, v, j.scale)) ++hit;
                }
            }
            const double cov = hit / 9.0;
            const double val = j.bg + (j.fg - j.bg) * cov;
            const int q = static_cast<int>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
            pix[static_cast<size_t>(y) * img + x] = static_cast<float>(q) / 255.0f;
        }
    }
    return pix;
}

}  // namespace

const char* shape_name(int id) {
    if (id < 0 || id >= kNumShapes) throw InputError("shape id out of range");
    return kShapeNames[id];
}
const char* palette_name(int id) {
    if (id < 0 || id >= kNumPalettes) throw InputError("palette id out of range");
    return kPaletteNames[id];
}
int shape_id_from_name(const std::string& name) {
    for (int i = 0; i < kNumShapes; ++i)
        if (name == kShapeNames[i]) return i;
    return -1;
}
int palette_id_from_name(const std::string& name) {
    for (int i = 0; i < kNumPalettes; ++i)
        if (name == kPaletteNames[i]) return i;
    return -1;
}

std::vector<int> ConceptDataset::indices_of(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(images.size()); ++i)
        if (images[i].split == s) out.push_back(i);
    return out;
}

std::vector<int> ConceptDataset::indices_of_cell(int shape, int palette) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(images.size()); ++i)
        if (images[i].shape == shape && images[i].palette == palette) out.push_back(i);
    return out;
}

std::vector<int> ConceptDataset::indices_of_concept(const ConceptRef& c) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(images.size()); ++i) {
        const int v = c.attr == Attribute::Shape ? images[i].shape : images[i].palette;
        if (v == c.value) out.push_back(i);
    }
    return out;
}

uint64_t ConceptDataset::fingerprint() const {
    uint64_t h = fnv1a64(&img, sizeof(img));
    for (const auto& im : images) {
        for (float v : im.pix) {
            const uint8_t q = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            h = fnv1a64(&q, 1, h);
        }
        const uint8_t meta[3] = {static_cast<uint8_t>(im.shape), static_cast<uint8_t>(im.palette),
                                 static_cast<uint8_t>(im.split)};
        h = fnv1a64(meta, 3, h);
    }
    return h;
}

ConceptDataset generate_dataset(const DatasetSpec& spec, const ConceptRef& forget) {
    if (spec.n_per_cell < 1) throw InputError("dataset needs n_per_cell >= 1");
    if (spec.img < 8) throw InputError("dataset image side too small");
    ConceptDataset data;
    data.img = spec.img;
    data.spec = spec;
    data.forget_concept = forget;
    data.images.reserve(static_cast<size_t>(kNumShapes) * kNumPalettes * spec.n_per_cell);
    const double c0 = spec.img / 2.0;
    for (int s = 0; s < kNumShapes; ++s) {
        for (int p = 0; p < kNumPalettes; ++p) {
            for (int i = 0; i < spec.n_per_cell; ++i) {
                Rng rng(mix_seed({spec.seed, static_cast<uint64_t>(s), static_cast<uint64_t>(p),
                                  static_cast<uint64_t>(i)}));
                Jitter j;
                j.cx = c0 + rng.uniform(-1.2, 1.2) * spec.img / 16.0;
                j.cy = c0 + rng.uniform(-1.2, 1.2) * spec.img / 16.0;
                j.scale = rng.uniform(0.85, 1.15);
                j.rot = (s == 0) ? 0.0 : rng.uniform(-0.26, 0.26);
                j.bg = std::clamp(kPaletteBg[p] + rng.uniform(-0.02, 0.02), 0.0, 1.0);
                j.fg = std::clamp(kPaletteFg[p] + rng.uniform(-0.02, 0.02), 0.0, 1.0);
                ConceptImage im;
                im.pix = render(spec.img, s, j);
                im.shape = s;
                im.palette = p;
                const int attr_val = forget.attr == Attribute::Shape ? s : p;
                im.split = attr_val == forget.value ? Split::Forget : Split::Retain;
                data.images.push_back(std::move(im));
            }
        }
    }
    return data;
}

std::array<int, 2> overwrite_prompt(const ConceptImage& im, const ConceptRef& forget,
                                    const OverwriteSpec& ow) {
    if (ow.ref.attr != forget.attr)
        throw InputError("overwrite concept must live in the forgotten attribute's domain");
    std::array<int, 2> p = im.prompt();
    if (forget.attr == Attribute::Shape)
        p[0] = kShapeTokenBase + ow.ref.value;
    else
        p[1] = kPaletteTokenBase + ow.ref.value;
    return p;
}

void save_dataset(const ConceptDataset& data, const std::string& dir) {
    ensure_dir(dir);
    nlohmann::json manifest;
    manifest["seed"] = data.spec.seed;
    manifest["n_per_cell"] = data.spec.n_per_cell;
    manifest["img"] = data.img;
    manifest["forget"] = {
        {"attribute", data.forget_concept.attr == Attribute::Shape ? "shape" : "palette"},
        {"value", data.forget_concept.name()}};
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(data.fingerprint()));
    manifest["fingerprint"] = fp;
    nlohmann::json items = nlohmann::json::array();
    for (size_t i = 0; i < data.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.pgm", i);
        write_pgm(dir + "/" + name, data.images[i].pix, data.img, data.img);
        items.push_back({{"file", name},
                         {"shape", shape_name(data.images[i].shape)},
                         {"palette", palette_name(data.images[i].palette)},
                         {"split", data.images[i].split == Split::Forget ? "forget" : "retain"}});
    }
    manifest["images"] = std::move(items);
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

ConceptDataset load_dataset(const std::string& dir) {
    const auto manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
    ConceptDataset data;
    data.spec.seed = manifest.at("seed").get<uint64_t>();
    data.spec.n_per_cell = manifest.at("n_per_cell").get<int>();
    data.img = manifest.at("img").get<int>();
    data.spec.img = data.img;
    const auto& f = manifest.at("forget");
    data.forget_concept.attr =
        f.at("attribute").get<std::string>() == "shape" ? Attribute::Shape : Attribute::Palette;
    const std::string fv = f.at("value").get<std::string>();
    data.forget_concept.value = data.forget_concept.attr == Attribute::Shape
                                    ? shape_id_from_name(fv)
                                    : palette_id_from_name(fv);
    if (data.forget_concept.value < 0) throw IoError("manifest: unknown forget concept " + fv);
    for (const auto& item : manifest.at("images")) {
        ConceptImage im;
        int w = 0, h = 0;
        im.pix = read_pgm(dir + "/" + item.at("file").get<std::string>(), &w, &h);
        if (w != data.img || h != data.img) throw IoError("dataset image has wrong size");
        im.shape = shape_id_from_name(item.at("shape").get<std::string>());
        im.palette = palette_id_from_name(item.at("palette").get<std::string>());
        if (im.shape < 0 || im.palette < 0) throw IoError("manifest: unknown label");
        im.split = item.at("split").get<std::string>() == "forget" ? Split::Forget : Split::Retain;
        data.images.push_back(std::move(im));
    }
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(data.fingerprint()));
    if (manifest.at("fingerprint").get<std::string>() != fp)
        throw IoError("dataset fingerprint mismatch; files were modified");
    return data;
}

std::vector<float> hflip(const std::vector<float>& pix, int img) {
    std::vector<float> out(pix.size());
    for (int y = 0; y < img; ++y)
        for (int x = 0; x < img; ++x)
            out[static_cast<size_t>(y) * img + x] = pix[static_cast<size_t>(y) * img + (img - 1 - x)];
    return out;
}

}  // namespace fade
