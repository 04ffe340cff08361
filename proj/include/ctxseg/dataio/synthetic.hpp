#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctxseg/dataio/image.hpp"

namespace ctxseg {

enum class ShapeKind { circle, square, triangle, stripe };
enum class TextureKind { plain, stripes, checker, dots };

struct ClassStyle {
    std::string name;  // also the phrase, e.g. "red circle"
    ShapeKind shape = ShapeKind::circle;
    std::array<double, 3> color{};
    TextureKind texture = TextureKind::plain;
};

struct SegmentationSample {
    Image image;
    Mask mask;
    std::string phrase;
    std::size_t class_id = 0;
    std::string split;
};

struct SyntheticTaskSpec {
    std::size_t n_classes = 2;
    std::size_t train_samples = 64;
    std::size_t val_samples = 16;
    std::size_t test_samples = 16;
    std::size_t image_size = 64;
    std::uint64_t seed = 7;
    // Object extent as a fraction of the image side.
    double min_extent = 0.35;
    double max_extent = 0.55;

    void validate() const;
};

struct Dataset {
    std::vector<SegmentationSample> train;
    std::vector<SegmentationSample> val;
    std::vector<SegmentationSample> test;

    const std::vector<SegmentationSample>& split(const std::string& name) const;
};

inline constexpr std::size_t kMaxSyntheticClasses = 10;

// Styles for classes 0..n-1; names are unique.
std::vector<ClassStyle> class_styles(std::size_t n_classes);

Dataset generate_dataset(const SyntheticTaskSpec& spec);

// One sample of the given class drawn from `rng`; pixel values are
// multiples of 1/255 so they survive 8-bit storage exactly.
SegmentationSample generate_sample(const ClassStyle& style, std::size_t class_id, std::size_t image_size,
                                   double min_extent, double max_extent, std::mt19937_64& rng);

}  // namespace ctxseg
