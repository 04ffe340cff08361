#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctxseg/sweep/tpe.hpp"
#include "ctxseg/training/train.hpp"

namespace ctxseg {

enum class TrialStatus { complete, failed };

struct TrialRecord {
    std::size_t trial_id = 0;
    TrialConfig config;
    double val_dice = 0.0;
    double test_dice = 0.0;
    TrialStatus status = TrialStatus::complete;
    std::uint64_t seed = 0;
    double wall_time = 0.0;  // seconds
    std::string error;

    bool operator==(const TrialRecord&) const = default;
};

struct StudyState {
    PromptKind kind = PromptKind::coop;
    SamplerKind sampler = SamplerKind::tpe;
    SearchSpace space;
    std::uint64_t seed = 0;
    std::string rng_state;  // serialized std::mt19937_64
    std::vector<TrialRecord> trials;

    // Index of the complete trial with the highest val_dice.
    std::optional<std::size_t> best() const;
    std::vector<Observation> observations() const;
};

struct TrialOutcome {
    double val_dice = 0.0;
    double test_dice = 0.0;
};

using Objective = std::function<TrialOutcome(const TrialConfig&, std::uint64_t seed)>;

struct StudyOptions {
    std::size_t n_trials = 20;
    std::uint64_t seed = 0;
    SamplerKind sampler = SamplerKind::tpe;
    TpeOptions tpe;
    std::optional<std::filesystem::path> path;  // study file; resumed when present
    std::optional<std::size_t> max_new_trials;  // stop early, for interruption
};

struct StudyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

StudyState run_study(PromptKind kind, const SearchSpace& space, const Objective& objective,
                     const StudyOptions& options);

// JSON-lines study file: header line, then one record per trial.
void save_study(const std::filesystem::path& path, const StudyState& state);
StudyState load_study(const std::filesystem::path& path);

/// Training objective: maps a trial config onto `base` and trains.
Objective training_objective(const Backbone& backbone, const Dataset& data, TrainRunConfig base, PromptKind kind);

// Applies the sweep keys of `config` to a run configuration.
TrainRunConfig apply_trial(TrainRunConfig base, PromptKind kind, const TrialConfig& config);

/// Smooth synthetic response in [0,1] peaking at a fixed interior point,
/// for exercising samplers without training.
Objective quadratic_objective(const SearchSpace& space, PromptKind kind, std::uint64_t seed);

}  // namespace ctxseg
