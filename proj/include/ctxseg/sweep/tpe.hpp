#pragma once

#include <optional>
#include <random>
#include <vector>

#include "ctxseg/sweep/space.hpp"

namespace ctxseg {

struct Observation {
    TrialConfig config;
    double value = 0.0;  // larger is better
};

struct TpeOptions {
    double gamma = 0.25;
    std::size_t n_startup = 10;
    std::size_t n_candidates = 24;
    double prior_weight = 1.0;
};

enum class SamplerKind { tpe, random };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

/// Uniform draw over every applicable dimension.
TrialConfig sample_uniform(const std::vector<Dimension>& dims, std::mt19937_64& rng);

/// Independent per-dimension TPE. Uniform while history is shorter than
/// n_startup or when every observed value is equal.
TrialConfig sample_tpe(const std::vector<Dimension>& dims, const std::vector<Observation>& history,
                       std::mt19937_64& rng, const TpeOptions& options = {});

TrialConfig sample_trial(const SearchSpace& space, PromptKind kind, const std::vector<Observation>& history,
                         std::mt19937_64& rng, SamplerKind sampler = SamplerKind::tpe, const TpeOptions& options = {});

}  // namespace ctxseg
