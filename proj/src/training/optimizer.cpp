#include "ctxseg/training/optimizer.hpp"

#include <cmath>

namespace ctxseg {

void AdamWConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

AdamW::AdamW(const ParameterList& params, AdamWConfig config) : config_(config) {
    config_.validate();
    for (const auto& p : params) {
        if (!p.tensor.requires_grad()) throw ContractError("optimizer given frozen tensor '" + p.name + "'");
        names_.push_back(p.name);
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::step(const ParameterList& params) {
    if (params.size() != names_.size()) {
        throw ContractError("optimizer holds moments for " + std::to_string(names_.size()) + " tensors, got " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != names_[i] || params[i].tensor.numel() != m_[i].size())
            throw ContractError("no moment buffer for parameter '" + params[i].name + "'");
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double lr = config_.learning_rate, wd = config_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        auto theta = t.data();
        auto& m = m_[i];
        auto& v = v_[i];
        const bool has = t.has_grad();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double g = has ? t.grad()[k] : 0.0;
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            const double mh = m[k] / c1, vh = v[k] / c2;
            theta[k] -= lr * (mh / (std::sqrt(vh) + config_.eps) + wd * theta[k]);
        }
    }
}

}  // namespace ctxseg
