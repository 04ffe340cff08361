#pragma once

#include <optional>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ctxseg/backbone/backbone.hpp"

namespace ctxseg {

enum class PromptKind { deep_textual, coop, cocoop, vpt, maple, shared_attention, shared_separate };

inline constexpr PromptKind kAllPromptKinds[] = {PromptKind::deep_textual, PromptKind::coop,
                                                 PromptKind::cocoop,       PromptKind::vpt,
                                                 PromptKind::maple,        PromptKind::shared_attention,
                                                 PromptKind::shared_separate};

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view name);

bool prompts_text(PromptKind kind);
bool prompts_vision(PromptKind kind);
bool is_multimodal(PromptKind kind);
// Kinds whose depth-1 prompts live in the text embedding space.
bool supports_text_init(PromptKind kind);

enum class InitMode { gaussian, photo_of_a };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view name);

inline constexpr double kPromptInitStd = 0.02;
inline constexpr std::string_view kPhotoOfAPhrase = "a photo of a";

struct CouplerConfig {
    std::size_t unified_width = 32;  // H_u; MaPLe requires H_u == H_l
    bool use_lora = false;
    std::size_t intermediate_dim = 32;  // LoRA rank, or the CoCoOp bottleneck
    std::size_t attn_heads = 4;
    double attn_dropout = 0.1;
    std::size_t attn_ff_dim = 53;
    bool layernorm_first = true;
    bool separate_layernorm = true;  // Shared Separate: norm after each projection
};

/// Affine map, either dense (x W + b) or low-rank (x A B + b) with inner
/// dimension `rank` and both factors trainable.
struct Projection {
    bool low_rank = false;
    Tensor weight;  // dense: [in, out]
    Tensor down;    // low-rank: [in, rank]
    Tensor up;      // low-rank: [rank, out]
    Tensor bias;    // [out]

    static Projection dense(std::size_t in, std::size_t out, std::mt19937_64& rng);
    static Projection lora(std::size_t in, std::size_t out, std::size_t rank, std::mt19937_64& rng);

    Tensor operator()(const Tensor& x) const;
    // The equivalent dense [in, out] matrix.
    std::vector<double> composed_matrix() const;
    std::size_t in_dim() const;
    std::size_t out_dim() const;
    void append_parameters(ParameterList& out, const std::string& prefix) const;
    Projection clone() const;
};

// U^l = identity, U^v = projection H_l -> H_v.
struct MapleCoupler {
    Projection to_visual;
};

struct SeparateBranch {
    Projection projection;
    std::optional<LayerNormParams> norm;
};

// U^l and U^v as independent projections, each optionally normalized.
struct SeparateCoupler {
    SeparateBranch text;
    SeparateBranch visual;
};

// One transformer block over the unified prompts, then a linear head per modality.
struct AttentionCoupler {
    TransformerLayer block;
    TransformerLayerOptions options;
    LinearParams to_text;
    LinearParams to_visual;
};

using Coupler = std::variant<MapleCoupler, SeparateCoupler, AttentionCoupler>;

/// CoCoOp's image-conditioned bias: H_vl -> bottleneck -> H_l with a GELU
/// in between, or a single rank-limited map when low_rank is set.
struct MetaNet {
    bool low_rank = false;
    LinearParams hidden;  // H_vl -> d
    LinearParams output;  // d -> H_l
    Projection factored;  // low-rank H_vl -> H_l

    Tensor operator()(const Tensor& z_image) const;  // [H_vl] -> [H_l]
    void zero_output();
    void append_parameters(ParameterList& out) const;
};

/// Learnable context for one strategy. Only the fields implied by `kind`
/// are populated.
struct PromptState {
    PromptKind kind = PromptKind::coop;
    std::size_t length = 0;  // B
    std::size_t depth = 0;   // J
    CouplerConfig coupler_config;
    std::vector<Tensor> textual;  // [J] x [B, H_l]
    std::vector<Tensor> visual;   // [J] x [B, H_v]
    std::vector<Tensor> unified;  // [J] x [B, H_u]
    std::vector<Coupler> couplers;
    std::optional<MetaNet> meta_net;

    ParameterList parameters() const;
    PromptState clone() const;
};

PromptState init_prompts(PromptKind kind, std::size_t length, std::size_t depth, const Backbone& backbone,
                         InitMode init, const CouplerConfig& coupler, std::uint64_t seed);

std::pair<Tensor, Tensor> couple(const Tensor& unified, const Coupler& coupler, const ForwardContext& ctx = {},
                                 std::uint64_t stream = 0);

// Effective textual prompts P_i + pi(z_v) for every depth.
std::vector<Tensor> cocoop_condition(const PromptState& state, const Tensor& z_image);

struct PromptPlans {
    PromptPlan textual;
    PromptPlan visual;
};

// z_image is required for CoCoOp and ignored otherwise.
PromptPlans build_plans(const PromptState& state, const Tensor* z_image, const ForwardContext& ctx = {});

/// Everything the optimizer may touch: prompts, couplers, meta-net and,
/// when enabled, the residual upsampler. Nothing from the frozen backbone.
ParameterList trainable_parameters(const PromptState& state, const Backbone& backbone, bool use_upsampler);

}  // namespace ctxseg
