#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fade/errors.hpp"

namespace fade {

// Two independent attributes: shape (what is drawn) and palette (the
// background/foreground intensity pair). 4 values each, 16 cells total.
enum class Attribute : uint8_t { Shape = 0, Palette = 1 };

constexpr int kNumShapes = 4;
constexpr int kNumPalettes = 4;
constexpr int kShapeTokenBase = 0;    // token ids 0..3
constexpr int kPaletteTokenBase = 4;  // token ids 4..7
constexpr int kVocabSize = kNumShapes + kNumPalettes;

const char* shape_name(int id);
const char* palette_name(int id);
int shape_id_from_name(const std::string& name);    // -1 when unknown
int palette_id_from_name(const std::string& name);  // -1 when unknown

// One attribute value, e.g. shape=circle. Used for forget/overwrite concepts.
struct ConceptRef {
    Attribute attr = Attribute::Shape;
    int value = 0;

    bool operator==(const ConceptRef&) const = default;
    std::string name() const {
        return attr == Attribute::Shape ? shape_name(value) : palette_name(value);
    }
    int token_id() const {
        return attr == Attribute::Shape ? kShapeTokenBase + value : kPaletteTokenBase + value;
    }
};

// The surrogate the forgotten concept should map to. Same attribute domain as
// the forget concept; prompts are rewritten by substituting this value.
struct OverwriteSpec {
    ConceptRef ref;
    std::string human_name() const { return ref.name(); }
};

enum class Split : uint8_t { Retain = 0, Forget = 1 };

struct ConceptImage {
    std::vector<float> pix;  // img*img values in [0,1], quantized to /255
    int shape = 0;
    int palette = 0;
    Split split = Split::Retain;

    std::array<int, 2> prompt() const {
        return {kShapeTokenBase + shape, kPaletteTokenBase + palette};
    }
};

struct DatasetSpec {
    uint64_t seed = 1234;
    int n_per_cell = 200;
    int img = 16;
};

struct ConceptDataset {
    int img = 16;
    DatasetSpec spec;
    ConceptRef forget_concept;
    std::vector<ConceptImage> images;

    std::vector<int> indices_of(Split s) const;
    std::vector<int> indices_of_cell(int shape, int palette) const;
    std::vector<int> indices_of_concept(const ConceptRef& c) const;
    uint64_t fingerprint() const;
};

// Deterministic procedural rendering: anti-aliased shapes with per-sample
// position/scale jitter, on one of four (bg, fg) intensity palettes. The
// forget split is exactly the images matching `forget`.
ConceptDataset generate_dataset(const DatasetSpec& spec, const ConceptRef& forget);

// Prompt under the overwrite concept: the forgotten attribute slot is
// replaced, the other attribute kept.
std::array<int, 2> overwrite_prompt(const ConceptImage& im, const ConceptRef& forget,
                                    const OverwriteSpec& ow);
std::array<int, 2> apply_overwrite(const std::array<int, 2>& prompt, const OverwriteSpec& ow);

// Manifest JSON + one 8-bit PGM per image.
void save_dataset(const ConceptDataset& data, const std::string& dir);
ConceptDataset load_dataset(const std::string& dir);

std::vector<float> hflip(const std::vector<float>& pix, int img);

}  // namespace fade
