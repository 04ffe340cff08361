#pragma once

#include "ctxseg/prompts/prompt_state.hpp"

namespace ctxseg {

struct ForwardTraces {
    SlotTrace text;
    SlotTrace vision;
};

struct ModelOutput {
    DecodeOutput decoded;
    TextEncoding text;
    ImageEncoding image;
    PromptPlans plans;

    const Tensor& logits() const { return decoded.logits; }
};

/// Full segmentation forward: image and text encoders with the strategy's
/// prompts, then the decoder. `state` may be null for the untuned model.
ModelOutput forward(const Backbone& backbone, const PromptState* state, const Tensor& image, const TokenIds& tokens,
                    bool use_upsampler, const ForwardContext& ctx = {}, ForwardTraces* traces = nullptr);

}  // namespace ctxseg
