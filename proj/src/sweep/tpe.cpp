#include "ctxseg/sweep/tpe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctxseg {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Internal coordinate: log for log dims, +-0.5 around integers.
struct Range {
    double lo, hi;
};

Range internal_range(const Dimension& d) {
    switch (d.kind) {
        case DimKind::log_uniform: return {std::log(d.low), std::log(d.high)};
        case DimKind::integer: return {d.low - 0.5, d.high + 0.5};
        default: return {d.low, d.high};
    }
}

double to_internal(const Dimension& d, double v) { return d.kind == DimKind::log_uniform ? std::log(v) : v; }

double from_internal(const Dimension& d, double t) {
    switch (d.kind) {
        case DimKind::log_uniform: return std::clamp(std::exp(t), d.low, d.high);
        case DimKind::integer: return std::clamp(std::round(t), d.low, d.high);
        default: return std::clamp(t, d.low, d.high);
    }
}

double draw_uniform(const Dimension& d, std::mt19937_64& rng) {
    switch (d.kind) {
        case DimKind::log_uniform: {
            std::uniform_real_distribution<double> u(std::log(d.low), std::log(d.high));
            return std::clamp(std::exp(u(rng)), d.low, d.high);
        }
        case DimKind::uniform: {
            std::uniform_real_distribution<double> u(d.low, d.high);
            return u(rng);
        }
        case DimKind::integer: {
            std::uniform_int_distribution<long long> u(static_cast<long long>(d.low), static_cast<long long>(d.high));
            return static_cast<double>(u(rng));
        }
        case DimKind::categorical: {
            std::uniform_int_distribution<std::size_t> u(0, d.choices.size() - 1);
            return d.choices[u(rng)];
        }
    }
    return d.low;
}

/// Truncated Gaussian mixture over [lo, hi] plus a uniform prior component.
class Parzen {
public:
    Parzen(std::vector<double> centers, Range r, double prior_weight) : mu_(std::move(centers)), r_(r), w_(prior_weight) {
        const double n = static_cast<double>(mu_.size());
        const double width = r_.hi - r_.lo;
        double mean = 0.0, var = 0.0;
        for (double m : mu_) mean += m;
        mean /= std::max(n, 1.0);
        for (double m : mu_) var += (m - mean) * (m - mean);
        const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        // Scott's rule in one dimension
        h_ = sd > 0 ? 1.059 * sd * std::pow(n, -0.2) : 0.1 * width;
        h_ = std::clamp(h_, 0.01 * width, width);
        for (double m : mu_) mass_.push_back(normal_cdf((r_.hi - m) / h_) - normal_cdf((r_.lo - m) / h_));
    }

    double pdf(double t) const {
        const double width = r_.hi - r_.lo;
        double acc = w_ / width;
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            const double z = (t - mu_[i]) / h_;
            acc += std::exp(-0.5 * z * z) / (h_ * std::sqrt(2.0 * std::numbers::pi) * mass_[i]);
        }
        return acc / (static_cast<double>(mu_.size()) + w_);
    }

    double sample(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double total = static_cast<double>(mu_.size()) + w_;
        const double pick = unit(rng) * total;
        if (pick >= static_cast<double>(mu_.size())) return r_.lo + (r_.hi - r_.lo) * unit(rng);
        const double m = mu_[static_cast<std::size_t>(pick)];
        std::normal_distribution<double> normal(m, h_);
        for (int attempt = 0; attempt < 64; ++attempt) {
            const double t = normal(rng);
            if (t >= r_.lo && t <= r_.hi) return t;
        }
        return std::clamp(m, r_.lo, r_.hi);
    }

private:
    std::vector<double> mu_;
    Range r_;
    double w_;
    double h_ = 1.0;
    std::vector<double> mass_;
};

std::vector<double> categorical_weights(const Dimension& d, const std::vector<double>& values, double prior) {
    const double k = static_cast<double>(d.choices.size());
    std::vector<double> w(d.choices.size(), prior / k);
    for (double v : values) {
        auto it = std::find(d.choices.begin(), d.choices.end(), v);
        if (it != d.choices.end()) w[static_cast<std::size_t>(it - d.choices.begin())] += 1.0;
    }
    double total = 0.0;
    for (double x : w) total += x;
    for (double& x : w) x /= total;
    return w;
}

double sample_dimension(const Dimension& d, const std::vector<double>& good, const std::vector<double>& bad,
                        std::mt19937_64& rng, const TpeOptions& o) {
    if (d.kind == DimKind::categorical) {
        const auto l = categorical_weights(d, good, o.prior_weight);
        const auto g = categorical_weights(d, bad, o.prior_weight);
        std::discrete_distribution<std::size_t> draw(l.begin(), l.end());
        std::size_t best = 0;
        double best_ratio = -1.0;
        for (std::size_t c = 0; c < o.n_candidates; ++c) {
            const std::size_t i = draw(rng);
            const double ratio = l[i] / g[i];
            if (ratio > best_ratio) {
                best_ratio = ratio;
                best = i;
            }
        }
        return d.choices[best];
    }
    const Range r = internal_range(d);
    auto internal = [&](const std::vector<double>& values) {
        std::vector<double> out;
        for (double v : values) out.push_back(to_internal(d, v));
        return out;
    };
    const Parzen l(internal(good), r, o.prior_weight), g(internal(bad), r, o.prior_weight);
    double best_t = 0.0, best_ratio = -1.0;
    for (std::size_t c = 0; c < o.n_candidates; ++c) {
        const double t = l.sample(rng);
        const double ratio = l.pdf(t) / g.pdf(t);
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best_t = t;
        }
    }
    return from_internal(d, best_t);
}

}  // namespace

std::string_view to_string(SamplerKind kind) { return kind == SamplerKind::tpe ? "tpe" : "random"; }

SamplerKind parse_sampler_kind(std::string_view name) {
    if (name == "tpe") return SamplerKind::tpe;
    if (name == "random") return SamplerKind::random;
    throw ConfigError("unknown sampler '" + std::string(name) + "'");
}

TrialConfig sample_uniform(const std::vector<Dimension>& dims, std::mt19937_64& rng) {
    if (dims.empty()) throw ConfigError("cannot sample from an empty search space");
    TrialConfig out;
    for (const auto& d : dims) out[d.name] = draw_uniform(d, rng);
    return out;
}

TrialConfig sample_tpe(const std::vector<Dimension>& dims, const std::vector<Observation>& history,
                       std::mt19937_64& rng, const TpeOptions& o) {
    if (dims.empty()) throw ConfigError("cannot sample from an empty search space");
    if (!(o.gamma > 0.0 && o.gamma < 1.0) || o.n_candidates == 0) throw ConfigError("invalid TPE options");
    if (history.size() < std::max<std::size_t>(o.n_startup, 2)) return sample_uniform(dims, rng);

    std::vector<const Observation*> sorted;
    for (const auto& h : history) sorted.push_back(&h);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Observation* a, const Observation* b) { return a->value > b->value; });
    // identical values carry no preference
    if (sorted.front()->value == sorted.back()->value) return sample_uniform(dims, rng);

    const auto n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(o.gamma * static_cast<double>(sorted.size()))));
    TrialConfig out;
    for (const auto& d : dims) {
        std::vector<double> good, bad;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            auto it = sorted[i]->config.find(d.name);
            if (it == sorted[i]->config.end()) continue;
            (i < n_good ? good : bad).push_back(it->second);
        }
        out[d.name] = sample_dimension(d, good, bad, rng, o);
    }
    return out;
}

TrialConfig sample_trial(const SearchSpace& space, PromptKind kind, const std::vector<Observation>& history,
                         std::mt19937_64& rng, SamplerKind sampler, const TpeOptions& options) {
    const auto dims = space.applicable(kind);
    return sampler == SamplerKind::random ? sample_uniform(dims, rng) : sample_tpe(dims, history, rng, options);
}

}  // namespace ctxseg
