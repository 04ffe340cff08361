#pragma once

#include <span>

#include "ctxseg/dataio/image.hpp"
#include "ctxseg/tensor/tensor.hpp"

namespace ctxseg {

struct LossConfig {
    double lambda_d = 1.0;
    double lambda_ce = 0.2;
    double smooth = 1.0;  // added to numerator and denominator of the dice ratio

    void validate() const;
};

/// 1 - (2 sum(p g) + s) / (sum(p^2) + sum(g^2) + s) with p = sigmoid(logits).
Tensor dice_loss(const Tensor& logits, const Tensor& mask, double smooth);

// Same ratio on given probabilities, no graph.
double dice_loss_value(std::span<const double> probs, std::span<const double> mask, double smooth);

/// Mean of max(x,0) - x g + log(1 + exp(-|x|)).
Tensor bce_loss(const Tensor& logits, const Tensor& mask);

Tensor combined_loss(const Tensor& logits, const Tensor& mask, const LossConfig& cfg);
double combine(double dice, double bce, const LossConfig& cfg);

/// 2|P n G| / (|P| + |G|); 1 when both are empty.
double dice_score(const Mask& pred, const Mask& truth);

// Thresholds sigmoid(logits) at 0.5.
Mask predict_mask(const Tensor& logits);

}  // namespace ctxseg
