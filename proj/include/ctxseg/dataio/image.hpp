#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ctxseg/tensor/tensor.hpp"

namespace ctxseg {

/// Planar RGB image, values nominally in [0, 1].
struct Image {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;  // [c][y][x]

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    bool operator==(const Image&) const = default;
};

/// Binary segmentation mask. Kept as its own type so the interpolating
/// image resamplers can never be applied to it.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;  // 0 or 1, [y][x]

    Mask() = default;
    Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

Tensor to_tensor(const Image& image);        // [c, h, w]
Tensor mask_to_tensor(const Mask& mask);     // [h, w] of 0/1
Mask mask_from_probabilities(const Tensor& probs, double threshold = 0.5);

}  // namespace ctxseg
