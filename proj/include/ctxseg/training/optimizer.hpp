#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctxseg/tensor/checkpoint.hpp"

namespace ctxseg {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// AdamW with decoupled decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
class AdamW {
public:
    AdamW(const ParameterList& params, AdamWConfig config);

    // Consumes the current gradients of `params`, which must be the list the
    // optimizer was built with (same names, same order). Missing gradients
    // count as zero.
    void step(const ParameterList& params);

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
    const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

private:
    AdamWConfig config_;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_ = 0;
};

}  // namespace ctxseg
