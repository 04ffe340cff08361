#pragma once

#include <vector>

#include "ctxseg/backbone/config.hpp"
#include "ctxseg/backbone/tokenizer.hpp"
#include "ctxseg/backbone/transformer.hpp"
#include "ctxseg/prompts/injection.hpp"

namespace ctxseg {

struct TextEncoderState {
    Tensor token_embedding;  // [vocab, H_l]
    Tensor positional;       // [N_text, H_l]
    std::vector<TransformerLayer> layers;
    Tensor projection;       // [H_l, H_vl]
};

struct ImageEncoderState {
    Tensor patch_projection;  // [3*p*p, H_v]
    Tensor positional;        // [1 + n_patches, H_v]
    Tensor class_embedding;   // [H_v]
    std::vector<TransformerLayer> layers;
    Tensor projection;        // [H_v, H_vl]
};

struct UpsamplerState {
    Tensor kernel;           // [1, C, k, k]
    Tensor bias;             // [1]
    Tensor residual_factor;  // [1]
};

struct DecoderState {
    LinearParams conditioning;  // H_vl -> H_v modulation
    std::vector<TransformerLayer> layers;
    LayerNormParams norm;
    LinearParams unembed;       // H_v -> C * p * p
    Tensor head_kernel;         // [1, C, 1, 1]
    Tensor head_bias;           // [1]
    UpsamplerState upsampler;
};

struct TextEncoding {
    Tensor z;            // [H_vl]
    Tensor final_layer;  // W_K, [B + n, H_l]
    std::size_t eos_row = 0;
};

struct ImageEncoding {
    Tensor z;             // [H_vl]
    Tensor patch_tokens;  // [n_patches, H_v]
    Tensor final_layer;   // [1 + n_patches + B, H_v]
};

struct DecodeOutput {
    Tensor logits;       // [S, S]
    Tensor body_logits;  // [S, S], decoder head without the residual branch
    Tensor features;     // [C, S, S], penultimate feature map
};

/// Frozen miniature dual encoder plus segmentation decoder.
///
/// Everything except the residual upsampler is created with
/// requires_grad=false; the upsampler is switched on by the trainer when
/// the run enables it.
class Backbone {
public:
    explicit Backbone(BackboneConfig config);

    const BackboneConfig& config() const { return config_; }
    const TextEncoderState& text() const { return text_; }
    const ImageEncoderState& image() const { return image_; }
    const DecoderState& decoder() const { return decoder_; }

    TextEncoding encode_text(const TokenIds& tokens, const PromptPlan* prompts = nullptr,
                             SlotTrace* trace = nullptr) const;
    ImageEncoding encode_image(const Tensor& image, const PromptPlan* prompts = nullptr,
                               SlotTrace* trace = nullptr) const;
    DecodeOutput decode(const Tensor& patch_tokens, const Tensor& z_text, bool use_upsampler) const;

    // Frozen parameters only (the upsampler is listed separately).
    ParameterList frozen_parameters() const;
    ParameterList upsampler_parameters() const;

    // Splits an image [3,S,S] into rows of flattened patches [n_patches, 3*p*p].
    Tensor patchify(const Tensor& image) const;

    Backbone clone() const;

private:
    Backbone() = default;

    BackboneConfig config_;
    TextEncoderState text_;
    ImageEncoderState image_;
    DecoderState decoder_;
};

}  // namespace ctxseg
