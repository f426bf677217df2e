#include "fade/io.hpp"

#include <algorithm>
#include <cmath>

namespace fade {

void write_pgm(const std::string& path, const std::vector<float>& pix, int w, int h) {
    if (static_cast<int>(pix.size()) != w * h) throw InputError("write_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = std::clamp(pix[static_cast<size_t>(y) * w + x], 0.0f, 1.0f);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<float> read_pgm(const std::string& path, int* w_out, int* h_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError(path + ": not a binary PGM");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path + ": unsupported PGM header");
    in.get();  // single whitespace after header
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) throw IoError(path + ": truncated PGM");
    std::vector<float> pix(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) pix[i] = static_cast<float>(raw[i]) / 255.0f;
    if (w_out) *w_out = w;
    if (h_out) *h_out = h;
    return pix;
}

std::vector<float> tile_images(const std::vector<std::vector<float>>& imgs, int img_w, int img_h,
                               int cols, int* sheet_w, int* sheet_h) {
    const int n = static_cast<int>(imgs.size());
    if (n == 0 || cols <= 0) throw InputError("tile_images: empty input");
    const int rows = (n + cols - 1) / cols;
    const int W = cols * (img_w + 1) + 1;
    const int H = rows * (img_h + 1) + 1;
    std::vector<float> sheet(static_cast<size_t>(W) * H, 0.25f);
    for (int i = 0; i < n; ++i) {
        const int r = i / cols, c = i % cols;
        const int ox = 1 + c * (img_w + 1);
        const int oy = 1 + r * (img_h + 1);
        for (int y = 0; y < img_h; ++y)
            for (int x = 0; x < img_w; ++x)
                sheet[static_cast<size_t>(oy + y) * W + ox + x] =
                    imgs[i][static_cast<size_t>(y) * img_w + x];
    }
    if (sheet_w) *sheet_w = W;
    if (sheet_h) *sheet_h = H;
    return sheet;
}

}  // namespace fade
