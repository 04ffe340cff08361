#include "ctxseg/sweep/space.hpp"

#include <algorithm>
#include <cmath>

namespace ctxseg {

std::string_view to_string(DimKind kind) {
    switch (kind) {
        case DimKind::log_uniform: return "log";
        case DimKind::uniform: return "linear";
        case DimKind::integer: return "integer";
        case DimKind::categorical: return "choice";
    }
    return "unknown";
}

DimKind parse_dim_kind(std::string_view name) {
    for (auto k : {DimKind::log_uniform, DimKind::uniform, DimKind::integer, DimKind::categorical})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown dimension kind '" + std::string(name) + "'");
}

bool Dimension::applies(PromptKind k) const {
    return applies_to.empty() || std::find(applies_to.begin(), applies_to.end(), k) != applies_to.end();
}

bool Dimension::contains(double v) const {
    if (!std::isfinite(v)) return false;
    switch (kind) {
        case DimKind::log_uniform:
        case DimKind::uniform: return v >= low && v <= high;
        case DimKind::integer: return v >= low && v <= high && v == std::round(v);
        case DimKind::categorical: return std::find(choices.begin(), choices.end(), v) != choices.end();
    }
    return false;
}

SearchSpace SearchSpace::standard(std::size_t depth_max) {
    if (depth_max < 1) throw ConfigError("depth_max must be at least 1");
    using K = PromptKind;
    const std::vector<K> lora_kinds{K::cocoop, K::maple};
    const std::vector<K> attn{K::shared_attention};
    SearchSpace s;
    s.dimensions = {
        {"learning_rate", DimKind::log_uniform, 1e-5, 5e-3, {}, {}},
        {"weight_decay", DimKind::log_uniform, 1e-5, 0.01, {}, {}},
        {"prompt_depth", DimKind::integer, 1.0, static_cast<double>(depth_max), {}, {}},
        {"intermediate_dim", DimKind::categorical, 0, 0, {32, 64, 96, 128}, lora_kinds},
        {"use_lora", DimKind::categorical, 0, 0, {1, 0}, lora_kinds},
        {"attn_heads", DimKind::categorical, 0, 0, {2, 4, 8}, attn},
        {"attn_dropout", DimKind::uniform, 0.1, 0.55, {}, attn},
        {"attn_ff_dim", DimKind::categorical, 0, 0, {53, 59}, attn},
        {"layernorm_first", DimKind::categorical, 0, 0, {1, 0}, attn},
        {"shared_dim", DimKind::categorical, 0, 0, {32, 64}, {K::shared_separate}},
    };
    return s;
}

std::vector<Dimension> SearchSpace::applicable(PromptKind kind) const {
    std::vector<Dimension> out;
    for (const auto& d : dimensions)
        if (d.applies(kind)) out.push_back(d);
    if (out.empty()) throw ConfigError("search space has no dimension for " + std::string(to_string(kind)));
    return out;
}

void SearchSpace::check(const TrialConfig& config, PromptKind kind) const {
    const auto dims = applicable(kind);
    for (const auto& d : dims) {
        auto it = config.find(d.name);
        if (it == config.end()) throw ConfigError("trial is missing '" + d.name + "'");
        if (!d.contains(it->second))
            throw ConfigError("trial value " + std::to_string(it->second) + " outside the range of '" + d.name + "'");
    }
    for (const auto& [key, value] : config) {
        const bool known = std::any_of(dims.begin(), dims.end(), [&](const Dimension& d) { return d.name == key; });
        if (!known) throw ConfigError("'" + key + "' does not apply to " + std::string(to_string(kind)));
    }
}

}  // namespace ctxseg
