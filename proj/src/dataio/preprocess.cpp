#include "ctxseg/dataio/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctxseg {

namespace {

// Separable resampling weights along one axis.
struct Taps {
    std::vector<std::size_t> index;  // 4 per output
    std::vector<double> weight;
};

Taps cubic_taps(std::size_t in, std::size_t out) {
    Taps t;
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double base = std::floor(src);
        for (int k = -1; k <= 2; ++k) {
            const double pos = base + k;
            const auto clamped = static_cast<std::ptrdiff_t>(std::clamp(pos, 0.0, static_cast<double>(in - 1)));
            t.index.push_back(static_cast<std::size_t>(clamped));
            t.weight.push_back(cubic_kernel(src - pos));
        }
    }
    return t;
}

double sample_bilinear(const Image& img, std::size_t c, double y, double x) {
    const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
    y = std::clamp(y, 0.0, h - 1.0);
    x = std::clamp(x, 0.0, w - 1.0);
    const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    if (fy == 0.0 && fx == 0.0) return img.at(c, y0, x0);
    return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
           fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

void check_target(std::size_t h, std::size_t w) {
    if (h < 4 || w < 4) throw ConfigError("resize target must be at least 4 pixels per side");
}

}  // namespace

double cubic_kernel(double x, double a) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

Image resize_bicubic(const Image& image, std::size_t th, std::size_t tw) {
    check_target(th, tw);
    if (image.height == 0 || image.width == 0 || image.channels == 0)
        throw ShapeError("cannot resize an empty image");
    if (image.height == th && image.width == tw) return image;
    const Taps ty = cubic_taps(image.height, th), tx = cubic_taps(image.width, tw);
    Image rows(image.channels, image.height, tw);
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < image.height; ++y)
            for (std::size_t x = 0; x < tw; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) acc += tx.weight[4 * x + k] * image.at(c, y, tx.index[4 * x + k]);
                rows.at(c, y, x) = acc;
            }
    Image out(image.channels, th, tw);
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) acc += ty.weight[4 * y + k] * rows.at(c, ty.index[4 * y + k], x);
                out.at(c, y, x) = acc;
            }
    return out;
}

Image resize_bicubic(const Image& image, std::size_t target) { return resize_bicubic(image, target, target); }

Mask resize_nearest(const Mask& mask, std::size_t th, std::size_t tw) {
    check_target(th, tw);
    if (mask.height == 0 || mask.width == 0) throw ShapeError("cannot resize an empty mask");
    Mask out(th, tw);
    for (std::size_t y = 0; y < th; ++y) {
        const std::size_t sy = std::min(mask.height - 1, (y * mask.height) / th);
        for (std::size_t x = 0; x < tw; ++x) out.at(y, x) = mask.at(sy, std::min(mask.width - 1, (x * mask.width) / tw));
    }
    return out;
}

Mask resize_nearest(const Mask& mask, std::size_t target) { return resize_nearest(mask, target, target); }

bool AugmentParams::is_identity() const {
    return scale == 1.0 && translate_x == 0.0 && translate_y == 0.0 && rotate_deg == 0.0 && brightness == 0.0 &&
           contrast == 0.0;
}

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentRanges& r) {
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    AugmentParams p;
    p.scale = 1.0 + r.scale * sym(rng);
    p.translate_x = r.translate * sym(rng);
    p.translate_y = r.translate * sym(rng);
    p.rotate_deg = r.rotate_deg * sym(rng);
    p.brightness = r.brightness * sym(rng);
    p.contrast = r.contrast * sym(rng);
    return p;
}

SegmentationSample apply_augment(const SegmentationSample& sample, const AugmentParams& p) {
    if (p.scale <= 0.0) throw ConfigError("augment scale must be positive");
    const Image& src = sample.image;
    SegmentationSample out = sample;
    const double h = static_cast<double>(src.height), w = static_cast<double>(src.width);
    const double cy = h / 2.0, cx = w / 2.0;
    const double theta = p.rotate_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double ty = p.translate_y * h, tx = p.translate_x * w;
    const bool geometric = p.scale != 1.0 || p.rotate_deg != 0.0 || tx != 0.0 || ty != 0.0;

    if (geometric) {
        for (std::size_t y = 0; y < src.height; ++y) {
            for (std::size_t x = 0; x < src.width; ++x) {
                // inverse map of the output pixel center into the source
                const double dx = static_cast<double>(x) + 0.5 - cx - tx, dy = static_cast<double>(y) + 0.5 - cy - ty;
                const double sx = (ct * dx + st * dy) / p.scale + cx - 0.5;
                const double sy = (-st * dx + ct * dy) / p.scale + cy - 0.5;
                for (std::size_t c = 0; c < src.channels; ++c) out.image.at(c, y, x) = sample_bilinear(src, c, sy, sx);
                const double ny = std::round(sy), nx = std::round(sx);
                const bool in_bounds = ny >= 0 && nx >= 0 && ny < h && nx < w;
                out.mask.at(y, x) = in_bounds ? sample.mask.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) : 0;
            }
        }
    }
    if (p.brightness != 0.0 || p.contrast != 0.0) {
        for (std::size_t c = 0; c < out.image.channels; ++c) {
            double mean = 0.0;
            const std::size_t n = out.image.height * out.image.width;
            for (std::size_t i = 0; i < n; ++i) mean += out.image.data[c * n + i];
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                double& v = out.image.data[c * n + i];
                v = std::clamp(v + (v - mean) * p.contrast + mean * p.brightness, 0.0, 1.0);
            }
        }
    }
    return out;
}

SegmentationSample augment(const SegmentationSample& sample, std::mt19937_64& rng, const AugmentRanges& ranges) {
    return apply_augment(sample, sample_augment(rng, ranges));
}

namespace {

ChannelStats stats_of(const std::vector<const Image*>& images) {
    ChannelStats s;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (const Image* img : images) {
            if (img->channels != 3) throw ShapeError("channel statistics need RGB images");
            const std::size_t plane = img->height * img->width;
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = img->data[c * plane + i];
                sum += v;
                sq += v * v;
            }
            n += plane;
        }
        if (n == 0) throw ShapeError("channel statistics over zero pixels");
        s.mean[c] = sum / static_cast<double>(n);
        const double var = std::max(0.0, sq / static_cast<double>(n) - s.mean[c] * s.mean[c]);
        s.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
}

void check_stats(const ChannelStats& stats, const Image& image) {
    if (image.channels != 3) throw ShapeError("normalization expects 3 channels");
    for (double v : stats.std)
        if (!(v > 0.0)) throw ConfigError("normalization std must be positive");
}

}  // namespace

ChannelStats compute_stats(const std::vector<SegmentationSample>& samples) {
    std::vector<const Image*> images;
    for (const auto& s : samples) images.push_back(&s.image);
    return stats_of(images);
}

ChannelStats compute_stats(const Image& image) { return stats_of({&image}); }

Image normalize(const Image& image, const ChannelStats& stats) {
    check_stats(stats, image);
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) out.data[c * plane + i] = (image.data[c * plane + i] - stats.mean[c]) / stats.std[c];
    return out;
}

Image denormalize(const Image& image, const ChannelStats& stats) {
    check_stats(stats, image);
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) out.data[c * plane + i] = image.data[c * plane + i] * stats.std[c] + stats.mean[c];
    return out;
}

}  // namespace ctxseg
