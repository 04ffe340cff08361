#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ctxseg/dataio/synthetic.hpp"
#include "ctxseg/sweep/study.hpp"

namespace ctxseg {

using Json = nlohmann::json;

/// Every key with its default. Loaded files and overrides may only set
/// keys present here, with values of the same type.
Json default_config();

// Merges `patch` into `base`; throws ConfigError on unknown keys or type
// mismatches. Paths in messages use dots.
void merge_config(Json& base, const Json& patch);

// "a.b.c=value": value parsed as JSON when possible, else as a string.
void apply_override(Json& config, const std::string& assignment);

Json load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

BackboneConfig backbone_config(const Json& config);
SyntheticTaskSpec task_spec(const Json& config);
TrainRunConfig train_config(const Json& config);
std::vector<PromptKind> strategy_list(const Json& list);

struct SweepSettings {
    std::vector<PromptKind> strategies;
    std::size_t n_trials = 20;
    SamplerKind sampler = SamplerKind::tpe;
    std::uint64_t seed = 0;
    std::size_t trial_steps = 100;
    std::string objective = "train";  // or "quadratic"
    std::string task = "synthetic";
};

SweepSettings sweep_settings(const Json& config);

}  // namespace ctxseg
