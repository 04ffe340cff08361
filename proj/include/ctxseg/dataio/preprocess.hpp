#pragma once

#include <array>
#include <random>
#include <vector>

#include "ctxseg/dataio/synthetic.hpp"

namespace ctxseg {

inline constexpr double kCatmullRomA = -0.5;

// Cubic convolution kernel with parameter a.
double cubic_kernel(double x, double a = kCatmullRomA);

/// Bicubic resize (align-corners=false, edge-clamped taps). Images only.
Image resize_bicubic(const Image& image, std::size_t target_height, std::size_t target_width);
Image resize_bicubic(const Image& image, std::size_t target);

Mask resize_nearest(const Mask& mask, std::size_t target_height, std::size_t target_width);
Mask resize_nearest(const Mask& mask, std::size_t target);

struct AugmentParams {
    double scale = 1.0;        // [0.98, 1.02]
    double translate_x = 0.0;  // fraction of width, [-0.02, 0.02]
    double translate_y = 0.0;
    double rotate_deg = 0.0;   // [-5, 5]
    double brightness = 0.0;   // [-0.1, 0.1]
    double contrast = 0.0;     // [-0.1, 0.1]

    bool is_identity() const;
};

struct AugmentRanges {
    double scale = 0.02;
    double translate = 0.02;
    double rotate_deg = 5.0;
    double brightness = 0.1;
    double contrast = 0.1;
};

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentRanges& ranges = {});

// Geometric part to image (bilinear) and mask (nearest) identically;
// photometric part to the image only.
SegmentationSample apply_augment(const SegmentationSample& sample, const AugmentParams& params);
SegmentationSample augment(const SegmentationSample& sample, std::mt19937_64& rng, const AugmentRanges& ranges = {});

struct ChannelStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
};

ChannelStats compute_stats(const std::vector<SegmentationSample>& samples);
ChannelStats compute_stats(const Image& image);

Image normalize(const Image& image, const ChannelStats& stats);
Image denormalize(const Image& image, const ChannelStats& stats);

}  // namespace ctxseg
