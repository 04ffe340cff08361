#include "ctxseg/dataio/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctxseg {

namespace {

struct NamedColor {
    const char* name;
    std::array<double, 3> rgb;
};

constexpr NamedColor kPalette[kMaxSyntheticClasses] = {
    {"red", {0.86, 0.12, 0.12}},    {"blue", {0.12, 0.25, 0.90}},  {"green", {0.10, 0.75, 0.20}},
    {"yellow", {0.95, 0.85, 0.10}}, {"magenta", {0.85, 0.10, 0.80}}, {"cyan", {0.10, 0.85, 0.90}},
    {"orange", {0.98, 0.55, 0.05}}, {"purple", {0.45, 0.10, 0.70}}, {"white", {0.97, 0.97, 0.97}},
    {"black", {0.03, 0.03, 0.03}},
};

constexpr const char* kShapeNames[] = {"circle", "square", "triangle", "stripe"};

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t split) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (split + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double texture_gain(TextureKind t, std::size_t y, std::size_t x) {
    switch (t) {
        case TextureKind::plain: return 1.0;
        case TextureKind::stripes: return (y / 3) % 2 == 0 ? 1.0 : 0.8;
        case TextureKind::checker: return ((y / 4) + (x / 4)) % 2 == 0 ? 1.0 : 0.82;
        case TextureKind::dots: return (y % 4 == 1 && x % 4 == 1) ? 0.7 : 1.0;
    }
    return 1.0;
}

// Point-in-shape test in the shape's own frame (u, v), centered at 0.
bool inside(ShapeKind shape, double u, double v, double extent) {
    const double h = extent / 2.0;
    switch (shape) {
        case ShapeKind::circle: return u * u + v * v <= h * h;
        case ShapeKind::square: return std::abs(u) <= h && std::abs(v) <= h;
        case ShapeKind::triangle: {
            // apex up, base at v = +h
            if (v > h || v < -h) return false;
            const double half_width = (v + h) / 2.0;
            return std::abs(u) <= half_width;
        }
        case ShapeKind::stripe: return std::abs(u) <= 0.8 * extent && std::abs(v) <= extent / 5.0;
    }
    return false;
}

double bounding_radius(ShapeKind shape, double extent) {
    switch (shape) {
        case ShapeKind::circle: return extent / 2.0;
        case ShapeKind::square: return extent / std::numbers::sqrt2;
        case ShapeKind::triangle: return extent / std::numbers::sqrt2;
        case ShapeKind::stripe: return std::hypot(0.8 * extent, extent / 5.0);
    }
    return extent;
}

}  // namespace

void SyntheticTaskSpec::validate() const {
    if (n_classes < 2 || n_classes > kMaxSyntheticClasses) {
        throw ConfigError("n_classes must lie in [2, " + std::to_string(kMaxSyntheticClasses) + "], got " +
                          std::to_string(n_classes));
    }
    if (image_size < 8) throw ConfigError("synthetic image_size must be at least 8");
    if (!(min_extent > 0.0 && min_extent <= max_extent && max_extent <= 0.6))
        throw ConfigError("object extent range must satisfy 0 < min <= max <= 0.6");
}

const std::vector<SegmentationSample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "'");
}

std::vector<ClassStyle> class_styles(std::size_t n_classes) {
    if (n_classes > kMaxSyntheticClasses) throw ConfigError("at most 10 synthetic classes");
    std::vector<ClassStyle> out;
    for (std::size_t i = 0; i < n_classes; ++i) {
        const auto shape = static_cast<ShapeKind>(i % 4);
        const auto texture = static_cast<TextureKind>((i + i / 4) % 4);
        out.push_back({std::string(kPalette[i].name) + " " + kShapeNames[i % 4], shape, kPalette[i].rgb, texture});
    }
    return out;
}

SegmentationSample generate_sample(const ClassStyle& style, std::size_t class_id, std::size_t image_size,
                                   double min_extent, double max_extent, std::mt19937_64& rng) {
    const double s = static_cast<double>(image_size);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double extent = s * (min_extent + (max_extent - min_extent) * unit(rng));
    const double radius = std::min(bounding_radius(style.shape, extent), s / 2.0 - 1.0);
    const double cx = radius + (s - 2.0 * radius) * unit(rng);
    const double cy = radius + (s - 2.0 * radius) * unit(rng);
    const double angle = style.shape == ShapeKind::stripe ? std::numbers::pi * unit(rng)
                                                          : (unit(rng) - 0.5) * std::numbers::pi / 9.0;
    const double ca = std::cos(angle), sa = std::sin(angle);

    // Background: muted gray with a gentle gradient and pixel noise.
    const double base = 0.35 + 0.2 * unit(rng);
    const double gx = (unit(rng) - 0.5) * 0.15, gy = (unit(rng) - 0.5) * 0.15;
    std::array<double, 3> tint{};
    for (auto& t : tint) t = (unit(rng) - 0.5) * 0.06;

    SegmentationSample out;
    out.image = Image(3, image_size, image_size);
    out.mask = Mask(image_size, image_size);
    out.phrase = style.name;
    out.class_id = class_id;
    for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
            const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
            const double u = ca * px + sa * py, v = -sa * px + ca * py;
            const bool fg = inside(style.shape, u, v, extent);
            out.mask.at(y, x) = fg ? 1 : 0;
            const double noise = (unit(rng) - 0.5) * 0.08;
            const double ramp = gx * (px / s) + gy * (py / s);
            const double gain = texture_gain(style.texture, y, x);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v_bg = base + tint[c] + ramp + noise;
                const double v_fg = style.color[c] * gain + noise * 0.5;
                out.image.at(c, y, x) = quantize(fg ? v_fg : v_bg);
            }
        }
    }
    if (out.mask.count() == 0) throw std::logic_error("synthetic generator produced an empty mask");
    return out;
}

Dataset generate_dataset(const SyntheticTaskSpec& spec) {
    spec.validate();
    const auto styles = class_styles(spec.n_classes);
    Dataset ds;
    const std::pair<std::vector<SegmentationSample>*, std::size_t> splits[] = {
        {&ds.train, spec.train_samples}, {&ds.val, spec.val_samples}, {&ds.test, spec.test_samples}};
    const char* names[] = {"train", "val", "test"};
    for (std::size_t k = 0; k < 3; ++k) {
        std::mt19937_64 rng(split_seed(spec.seed, k));
        const std::size_t count = splits[k].second;
        // balanced classes in shuffled order
        std::vector<std::size_t> ids(count);
        for (std::size_t i = 0; i < count; ++i) ids[i] = i % spec.n_classes;
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t id : ids) {
            auto sample = generate_sample(styles[id], id, spec.image_size, spec.min_extent, spec.max_extent, rng);
            sample.split = names[k];
            splits[k].first->push_back(std::move(sample));
        }
    }
    return ds;
}

}  // namespace ctxseg
