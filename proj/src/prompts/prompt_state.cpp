#include "ctxseg/prompts/prompt_state.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ctxseg {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::pair<PromptKind, std::string_view> kKindNames[] = {
    {PromptKind::deep_textual, "deep-textual"}, {PromptKind::coop, "coop"},
    {PromptKind::cocoop, "cocoop"},             {PromptKind::vpt, "vpt"},
    {PromptKind::maple, "maple"},               {PromptKind::shared_attention, "shared-attention"},
    {PromptKind::shared_separate, "shared-separate"},
};

Tensor gaussian(std::size_t rows, std::size_t width, std::mt19937_64& rng) {
    return Tensor::randn({rows, width}, rng, kPromptInitStd);
}

void append_linear(ParameterList& out, const std::string& prefix, const LinearParams& p) {
    out.push_back({prefix + ".weight", p.weight});
    out.push_back({prefix + ".bias", p.bias});
}

}  // namespace

std::string_view to_string(PromptKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

PromptKind parse_prompt_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw ConfigError("unknown prompt strategy '" + std::string(name) + "'");
}

bool prompts_text(PromptKind kind) { return kind != PromptKind::vpt; }
bool prompts_vision(PromptKind kind) { return kind == PromptKind::vpt || is_multimodal(kind); }

bool is_multimodal(PromptKind kind) {
    return kind == PromptKind::maple || kind == PromptKind::shared_attention || kind == PromptKind::shared_separate;
}

bool supports_text_init(PromptKind kind) {
    return kind == PromptKind::deep_textual || kind == PromptKind::coop || kind == PromptKind::cocoop ||
           kind == PromptKind::maple;
}

std::string_view to_string(InitMode mode) { return mode == InitMode::gaussian ? "gaussian" : "photo-of-a"; }

InitMode parse_init_mode(std::string_view name) {
    if (name == "gaussian") return InitMode::gaussian;
    if (name == "photo-of-a") return InitMode::photo_of_a;
    throw ConfigError("unknown init mode '" + std::string(name) + "'");
}

Projection Projection::dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Projection p;
    p.weight = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    p.bias = Tensor({out}, 0.0);
    return p;
}

Projection Projection::lora(std::size_t in, std::size_t out, std::size_t rank, std::mt19937_64& rng) {
    if (rank == 0) throw ConfigError("low-rank projection needs rank >= 1");
    Projection p;
    p.low_rank = true;
    p.down = Tensor::randn({in, rank}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    p.up = Tensor::randn({rank, out}, rng, 1.0 / std::sqrt(static_cast<double>(rank)));
    p.bias = Tensor({out}, 0.0);
    return p;
}

Tensor Projection::operator()(const Tensor& x) const {
    if (!low_rank) return ops::linear(x, weight, bias);
    return ops::add_row(ops::matmul(ops::matmul(x, down), up), bias);
}

std::size_t Projection::in_dim() const { return low_rank ? down.dim(0) : weight.dim(0); }
std::size_t Projection::out_dim() const { return low_rank ? up.dim(1) : weight.dim(1); }

std::vector<double> Projection::composed_matrix() const {
    if (!low_rank) return {weight.data().begin(), weight.data().end()};
    NoGradGuard guard;
    auto m = ops::matmul(down, up);
    return {m.data().begin(), m.data().end()};
}

void Projection::append_parameters(ParameterList& out, const std::string& prefix) const {
    if (low_rank) {
        out.push_back({prefix + ".down", down});
        out.push_back({prefix + ".up", up});
    } else {
        out.push_back({prefix + ".weight", weight});
    }
    out.push_back({prefix + ".bias", bias});
}

Projection Projection::clone() const {
    Projection p;
    p.low_rank = low_rank;
    if (low_rank) {
        p.down = down.clone();
        p.up = up.clone();
    } else {
        p.weight = weight.clone();
    }
    p.bias = bias.clone();
    return p;
}

Tensor MetaNet::operator()(const Tensor& z_image) const {
    Tensor z = ops::reshape(z_image, {1, z_image.numel()});
    Tensor out = low_rank ? factored(z) : output(ops::gelu(hidden(z)));
    return ops::reshape(out, {out.numel()});
}

void MetaNet::zero_output() {
    auto clear = [](Tensor t) { std::fill(t.data().begin(), t.data().end(), 0.0); };
    if (low_rank) {
        clear(factored.up);
        clear(factored.bias);
    } else {
        clear(output.weight);
        clear(output.bias);
    }
}

void MetaNet::append_parameters(ParameterList& out) const {
    if (low_rank) {
        factored.append_parameters(out, "meta_net.factored");
    } else {
        append_linear(out, "meta_net.hidden", hidden);
        append_linear(out, "meta_net.output", output);
    }
}

ParameterList PromptState::parameters() const {
    ParameterList out;
    for (std::size_t i = 0; i < textual.size(); ++i) out.push_back({"prompt.textual." + std::to_string(i), textual[i]});
    for (std::size_t i = 0; i < visual.size(); ++i) out.push_back({"prompt.visual." + std::to_string(i), visual[i]});
    for (std::size_t i = 0; i < unified.size(); ++i) out.push_back({"prompt.unified." + std::to_string(i), unified[i]});
    for (std::size_t i = 0; i < couplers.size(); ++i) {
        const std::string prefix = "coupler." + std::to_string(i);
        std::visit(overloaded{
                       [&](const MapleCoupler& c) { c.to_visual.append_parameters(out, prefix + ".to_visual"); },
                       [&](const SeparateCoupler& c) {
                           c.text.projection.append_parameters(out, prefix + ".text");
                           if (c.text.norm) {
                               out.push_back({prefix + ".text_norm.gamma", c.text.norm->gamma});
                               out.push_back({prefix + ".text_norm.beta", c.text.norm->beta});
                           }
                           c.visual.projection.append_parameters(out, prefix + ".visual");
                           if (c.visual.norm) {
                               out.push_back({prefix + ".visual_norm.gamma", c.visual.norm->gamma});
                               out.push_back({prefix + ".visual_norm.beta", c.visual.norm->beta});
                           }
                       },
                       [&](const AttentionCoupler& c) {
                           c.block.append_parameters(out, prefix + ".block.");
                           append_linear(out, prefix + ".to_text", c.to_text);
                           append_linear(out, prefix + ".to_visual", c.to_visual);
                       },
                   },
                   couplers[i]);
    }
    if (meta_net) meta_net->append_parameters(out);
    return out;
}

PromptState PromptState::clone() const {
    PromptState s;
    s.kind = kind;
    s.length = length;
    s.depth = depth;
    s.coupler_config = coupler_config;
    for (const auto& t : textual) s.textual.push_back(t.clone());
    for (const auto& t : visual) s.visual.push_back(t.clone());
    for (const auto& t : unified) s.unified.push_back(t.clone());
    auto clone_branch = [](const SeparateBranch& b) {
        SeparateBranch c{b.projection.clone(), std::nullopt};
        if (b.norm) c.norm = ctxseg::clone(*b.norm);
        return c;
    };
    for (const auto& coupler : couplers) {
        s.couplers.push_back(std::visit(
            overloaded{
                [](const MapleCoupler& c) -> Coupler { return MapleCoupler{c.to_visual.clone()}; },
                [&](const SeparateCoupler& c) -> Coupler {
                    return SeparateCoupler{clone_branch(c.text), clone_branch(c.visual)};
                },
                [](const AttentionCoupler& c) -> Coupler {
                    return AttentionCoupler{c.block.clone(), c.options, ctxseg::clone(c.to_text),
                                            ctxseg::clone(c.to_visual)};
                },
            },
            coupler));
    }
    if (meta_net) {
        MetaNet m;
        m.low_rank = meta_net->low_rank;
        if (m.low_rank) {
            m.factored = meta_net->factored.clone();
        } else {
            m.hidden = ctxseg::clone(meta_net->hidden);
            m.output = ctxseg::clone(meta_net->output);
        }
        s.meta_net = std::move(m);
    }
    return s;
}

PromptState init_prompts(PromptKind kind, std::size_t length, std::size_t depth, const Backbone& backbone,
                         InitMode init, const CouplerConfig& coupler, std::uint64_t seed) {
    const auto& cfg = backbone.config();
    const std::size_t hl = cfg.text_width, hv = cfg.vision_width;
    if (length == 0) throw ConfigError("prompt length B must be at least 1");
    std::size_t max_depth = cfg.max_prompt_depth();
    if (kind == PromptKind::vpt) max_depth = cfg.vision_layers;
    if (!prompts_vision(kind)) max_depth = cfg.text_layers;
    if (depth < 1 || depth > max_depth) {
        throw ConfigError("prompt depth " + std::to_string(depth) + " outside [1, " + std::to_string(max_depth) +
                          "] for " + std::string(to_string(kind)));
    }
    if (init == InitMode::photo_of_a && !supports_text_init(kind)) {
        throw ConfigError("photo-of-a initialization needs text-space prompts; " + std::string(to_string(kind)) +
                          " has none");
    }
    if (coupler.use_lora && kind != PromptKind::maple && kind != PromptKind::cocoop) {
        throw ConfigError("use_lora applies to maple and cocoop only");
    }
    if (kind == PromptKind::maple && coupler.unified_width != hl) {
        throw ConfigError("maple keeps unified prompts in text space: H_u must equal H_l (" + std::to_string(hl) +
                          "), got " + std::to_string(coupler.unified_width));
    }
    if (kind == PromptKind::shared_attention) {
        if (coupler.attn_heads == 0 || coupler.unified_width % coupler.attn_heads != 0)
            throw ConfigError("attn_heads must divide the unified width");
        if (coupler.attn_dropout < 0.0 || coupler.attn_dropout >= 1.0)
            throw ConfigError("attn_dropout must lie in [0, 1)");
        if (coupler.attn_ff_dim == 0) throw ConfigError("attn_ff_dim must be positive");
    }
    if ((kind == PromptKind::cocoop || (kind == PromptKind::maple && coupler.use_lora)) && coupler.intermediate_dim == 0)
        throw ConfigError("intermediate_dim must be positive");

    std::mt19937_64 rng(seed);
    PromptState s;
    s.kind = kind;
    s.length = length;
    s.depth = depth;
    s.coupler_config = coupler;
    const std::size_t hu = coupler.unified_width;

    switch (kind) {
        case PromptKind::deep_textual:
        case PromptKind::coop:
        case PromptKind::cocoop:
            for (std::size_t i = 0; i < depth; ++i) s.textual.push_back(gaussian(length, hl, rng));
            break;
        case PromptKind::vpt:
            for (std::size_t i = 0; i < depth; ++i) s.visual.push_back(gaussian(length, hv, rng));
            break;
        case PromptKind::maple:
        case PromptKind::shared_attention:
        case PromptKind::shared_separate:
            for (std::size_t i = 0; i < depth; ++i) s.unified.push_back(gaussian(length, hu, rng));
            break;
    }

    for (std::size_t i = 0; i < depth && is_multimodal(kind); ++i) {
        if (kind == PromptKind::maple) {
            s.couplers.push_back(MapleCoupler{coupler.use_lora ? Projection::lora(hl, hv, coupler.intermediate_dim, rng)
                                                               : Projection::dense(hl, hv, rng)});
        } else if (kind == PromptKind::shared_separate) {
            SeparateCoupler c{{Projection::dense(hu, hl, rng), std::nullopt}, {Projection::dense(hu, hv, rng), std::nullopt}};
            if (coupler.separate_layernorm) {
                c.text.norm = LayerNormParams::identity(hl);
                c.visual.norm = LayerNormParams::identity(hv);
            }
            s.couplers.push_back(std::move(c));
        } else {
            AttentionCoupler c{TransformerLayer::init(hu, coupler.attn_ff_dim, rng),
                               {coupler.attn_heads, coupler.attn_dropout, coupler.layernorm_first},
                               LinearParams::init(hu, hl, rng), LinearParams::init(hu, hv, rng)};
            s.couplers.push_back(std::move(c));
        }
    }

    if (kind == PromptKind::cocoop) {
        MetaNet m;
        m.low_rank = coupler.use_lora;
        if (m.low_rank) {
            m.factored = Projection::lora(cfg.joint_width, hl, coupler.intermediate_dim, rng);
        } else {
            m.hidden = LinearParams::init(cfg.joint_width, coupler.intermediate_dim, rng);
            m.output = LinearParams::init(coupler.intermediate_dim, hl, rng, 0.1);
        }
        s.meta_net = std::move(m);
    }

    if (init == InitMode::photo_of_a) {
        Tensor& first = kind == PromptKind::maple ? s.unified.front() : s.textual.front();
        const auto ids = phrase_bytes(kPhotoOfAPhrase);
        auto table = backbone.text().token_embedding.data();
        auto dst = first.data();
        // Slots beyond the phrase keep their Gaussian draw; extra phrase tokens are dropped.
        for (std::size_t b = 0; b < std::min(length, ids.size()); ++b)
            std::copy_n(table.begin() + ids[b] * hl, hl, dst.begin() + b * hl);
    }

    for (auto& [name, t] : s.parameters()) t.set_requires_grad(true);
    return s;
}

std::pair<Tensor, Tensor> couple(const Tensor& unified, const Coupler& coupler, const ForwardContext& ctx,
                                 std::uint64_t stream) {
    return std::visit(
        overloaded{
            [&](const MapleCoupler& c) { return std::pair{unified, c.to_visual(unified)}; },
            [&](const SeparateCoupler& c) {
                auto branch = [&](const SeparateBranch& b) {
                    Tensor t = b.projection(unified);
                    return b.norm ? (*b.norm)(t) : t;
                };
                return std::pair{branch(c.text), branch(c.visual)};
            },
            [&](const AttentionCoupler& c) {
                Tensor h = c.block.forward(unified, c.options, ctx, stream);
                return std::pair{c.to_text(h), c.to_visual(h)};
            },
        },
        coupler);
}

std::vector<Tensor> cocoop_condition(const PromptState& state, const Tensor& z_image) {
    if (state.kind != PromptKind::cocoop || !state.meta_net) {
        throw ContractError("cocoop_condition called on a " + std::string(to_string(state.kind)) + " prompt state");
    }
    Tensor bias = (*state.meta_net)(z_image);
    std::vector<Tensor> out;
    out.reserve(state.textual.size());
    for (const auto& p : state.textual) out.push_back(ops::add_row(p, bias));
    return out;
}

PromptPlans build_plans(const PromptState& state, const Tensor* z_image, const ForwardContext& ctx) {
    PromptPlans plans;
    switch (state.kind) {
        case PromptKind::deep_textual:
        case PromptKind::coop:
            plans.textual = {state.length, state.textual};
            break;
        case PromptKind::cocoop:
            if (!z_image) throw ContractError("cocoop prompts need the image embedding");
            plans.textual = {state.length, cocoop_condition(state, *z_image)};
            break;
        case PromptKind::vpt:
            plans.visual = {state.length, state.visual};
            break;
        case PromptKind::maple:
        case PromptKind::shared_attention:
        case PromptKind::shared_separate:
            plans.textual.length = plans.visual.length = state.length;
            for (std::size_t i = 0; i < state.depth; ++i) {
                auto [text, vision] = couple(state.unified[i], state.couplers[i], ctx, i);
                plans.textual.per_depth.push_back(std::move(text));
                plans.visual.per_depth.push_back(std::move(vision));
            }
            break;
    }
    return plans;
}

ParameterList trainable_parameters(const PromptState& state, const Backbone& backbone, bool use_upsampler) {
    ParameterList out = state.parameters();
    if (use_upsampler) {
        for (auto& p : backbone.upsampler_parameters()) out.push_back(p);
    }
    return out;
}

}  // namespace ctxseg
