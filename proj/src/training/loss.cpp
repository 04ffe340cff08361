#include "ctxseg/training/loss.hpp"

#include <algorithm>
#include <cmath>

#include "ctxseg/tensor/ops.hpp"

namespace ctxseg {

namespace {

void check_pair(const Tensor& logits, const Tensor& mask, const char* op) {
    if (logits.shape() != mask.shape()) {
        throw ShapeError(std::string(op) + ": logits " + shape_to_string(logits.shape()) + " vs mask " +
                         shape_to_string(mask.shape()));
    }
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void LossConfig::validate() const {
    if (lambda_d < 0.0 || lambda_ce < 0.0) throw ConfigError("loss weights must be non-negative");
    if (smooth < 0.0) throw ConfigError("dice smoothing must be non-negative");
}

double dice_loss_value(std::span<const double> p, std::span<const double> g, double smooth) {
    if (p.size() != g.size()) throw ShapeError("dice: size mismatch");
    double inter = 0.0, pp = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * g[i];
        pp += p[i] * p[i];
        gg += g[i] * g[i];
    }
    const double den = pp + gg + smooth;
    if (den == 0.0) return 0.0;
    return 1.0 - (2.0 * inter + smooth) / den;
}

Tensor dice_loss(const Tensor& logits, const Tensor& mask, double smooth) {
    check_pair(logits, mask, "dice_loss");
    const std::size_t n = logits.numel();
    std::vector<double> p(n);
    auto x = logits.data();
    auto g = mask.data();
    double inter = 0.0, pp = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = sigmoid(x[i]);
        inter += p[i] * g[i];
        pp += p[i] * p[i];
        gg += g[i] * g[i];
    }
    const double num = 2.0 * inter + smooth, den = pp + gg + smooth;
    const double value = den == 0.0 ? 0.0 : 1.0 - num / den;
    auto li = logits.impl();
    std::vector<double> gt(g.begin(), g.end());
    return make_result({1}, {value}, {logits},
                       [li, p = std::move(p), gt = std::move(gt), num, den](std::span<const double> go) {
                           if (den == 0.0) return;
                           auto gx = grad_buffer(*li);
                           // d/dp of -num/den, chained through the sigmoid
                           for (std::size_t i = 0; i < p.size(); ++i) {
                               const double dp = -(2.0 * gt[i] * den - num * 2.0 * p[i]) / (den * den);
                               gx[i] += go[0] * dp * p[i] * (1.0 - p[i]);
                           }
                       },
                       "dice_loss");
}

Tensor bce_loss(const Tensor& logits, const Tensor& mask) {
    check_pair(logits, mask, "bce_loss");
    const std::size_t n = logits.numel();
    if (n == 0) throw ShapeError("bce_loss: empty input");
    auto x = logits.data();
    auto g = mask.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::max(x[i], 0.0) - x[i] * g[i] + std::log1p(std::exp(-std::abs(x[i])));
    auto li = logits.impl();
    std::vector<double> gt(g.begin(), g.end());
    return make_result({1}, {acc / static_cast<double>(n)}, {logits},
                       [li, gt = std::move(gt)](std::span<const double> go) {
                           auto gx = grad_buffer(*li);
                           const double inv = 1.0 / static_cast<double>(gt.size());
                           for (std::size_t i = 0; i < gt.size(); ++i)
                               gx[i] += go[0] * (sigmoid(li->data[i]) - gt[i]) * inv;
                       },
                       "bce_loss");
}

double combine(double dice, double bce, const LossConfig& cfg) { return cfg.lambda_d * dice + cfg.lambda_ce * bce; }

Tensor combined_loss(const Tensor& logits, const Tensor& mask, const LossConfig& cfg) {
    cfg.validate();
    Tensor d = ops::scale(dice_loss(logits, mask, cfg.smooth), cfg.lambda_d);
    if (cfg.lambda_ce == 0.0) return d;
    return ops::add(d, ops::scale(bce_loss(logits, mask), cfg.lambda_ce));
}

double dice_score(const Mask& pred, const Mask& truth) {
    if (pred.height != truth.height || pred.width != truth.width) throw ShapeError("dice_score: mask sizes differ");
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        p += pred.data[i];
        g += truth.data[i];
        inter += pred.data[i] & truth.data[i];
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

Mask predict_mask(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("predict_mask expects [h,w] logits");
    Mask m(logits.dim(0), logits.dim(1));
    auto x = logits.data();
    // sigmoid(x) >= 0.5 exactly when x >= 0
    for (std::size_t i = 0; i < x.size(); ++i) m.data[i] = x[i] >= 0.0 ? 1 : 0;
    return m;
}

}  // namespace ctxseg
