#include "ctxseg/prompts/model.hpp"

namespace ctxseg {

ModelOutput forward(const Backbone& backbone, const PromptState* state, const Tensor& image, const TokenIds& tokens,
                    bool use_upsampler, const ForwardContext& ctx, ForwardTraces* traces) {
    ModelOutput out;
    SlotTrace* text_trace = traces ? &traces->text : nullptr;
    SlotTrace* vision_trace = traces ? &traces->vision : nullptr;

    if (state && state->kind == PromptKind::cocoop) {
        // the meta-net reads z_v, so the image side runs first
        out.image = backbone.encode_image(image, nullptr, vision_trace);
        out.plans = build_plans(*state, &out.image.z, ctx);
    } else {
        if (state) out.plans = build_plans(*state, nullptr, ctx);
        out.image = backbone.encode_image(image, &out.plans.visual, vision_trace);
    }
    out.text = backbone.encode_text(tokens, &out.plans.textual, text_trace);
    out.decoded = backbone.decode(out.image.patch_tokens, out.text.z, use_upsampler);
    return out;
}

}  // namespace ctxseg
