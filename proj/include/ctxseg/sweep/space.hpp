#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctxseg/prompts/prompt_state.hpp"

namespace ctxseg {

enum class DimKind { log_uniform, uniform, integer, categorical };

std::string_view to_string(DimKind kind);
DimKind parse_dim_kind(std::string_view name);

/// One search dimension. Categorical choices are numeric (booleans as 0/1).
struct Dimension {
    std::string name;
    DimKind kind = DimKind::uniform;
    double low = 0.0;
    double high = 0.0;
    std::vector<double> choices;
    std::vector<PromptKind> applies_to;  // empty means every strategy

    bool applies(PromptKind kind) const;
    bool contains(double value) const;
    bool operator==(const Dimension&) const = default;
};

using TrialConfig = std::map<std::string, double>;

struct SearchSpace {
    std::vector<Dimension> dimensions;

    // Reference search space with depth capped at depth_max and the attention sizes
    // remapped to the miniature width.
    static SearchSpace standard(std::size_t depth_max);

    std::vector<Dimension> applicable(PromptKind kind) const;
    // Throws ConfigError unless `config` has exactly the applicable keys,
    // each within range.
    void check(const TrialConfig& config, PromptKind kind) const;
    bool operator==(const SearchSpace&) const = default;
};

// Full-scale attention coupler sizes, before remapping.
inline constexpr double kFullScaleAttnHeads[] = {16, 20, 32};
inline constexpr double kFullScaleAttnFfDim[] = {1280, 1420};

}  // namespace ctxseg
