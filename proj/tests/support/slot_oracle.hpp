#pragma once

// Slot-trace oracle for prompt injection. The expected layout of every
// layer input is worked out symbolically from (J, B, token count) and then
// compared with what the encoders actually did, including which prompt
// outputs still have a gradient path to the loss.

#include <cmath>
#include <sstream>
#include <string>

#include "ctxseg/prompts/model.hpp"
#include "ctxseg/training/loss.hpp"

namespace ctxseg::testing {

struct ExpectedSlot {
    std::size_t input_length = 0;
    std::size_t prompt_begin = 0;
    SlotSource source = SlotSource::none;
};

inline ExpectedSlot expected_text_slot(std::size_t layer, std::size_t depth, std::size_t length, std::size_t n_tokens) {
    if (length == 0 || depth == 0) return {n_tokens, 0, SlotSource::none};
    return {length + n_tokens, 0, layer < depth ? SlotSource::fresh : SlotSource::carried};
}

inline ExpectedSlot expected_vision_slot(std::size_t layer, std::size_t depth, std::size_t length,
                                         std::size_t n_patches) {
    if (length == 0 || depth == 0) return {1 + n_patches, 1 + n_patches, SlotSource::none};
    return {1 + n_patches + length, 1 + n_patches, layer < depth ? SlotSource::fresh : SlotSource::carried};
}

inline bool rows_equal(const Tensor& a, std::size_t a_begin, const Tensor& b, std::size_t b_begin, std::size_t rows) {
    const std::size_t w = a.dim(1);
    if (b.dim(1) != w) return false;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < w; ++k)
            if (a[(a_begin + r) * w + k] != b[(b_begin + r) * w + k]) return false;
    return true;
}

inline double max_abs_grad_rows(const Tensor& t, std::size_t begin, std::size_t rows) {
    if (!t.has_grad()) return 0.0;
    const std::size_t w = t.dim(1);
    double m = 0.0;
    for (std::size_t i = begin * w; i < (begin + rows) * w; ++i) m = std::max(m, std::abs(t.grad()[i]));
    return m;
}

// Checks one encoder trace against the oracle. Empty string on success.
inline std::string check_trace(const char* side, const SlotTrace& trace, const PromptPlan& plan, std::size_t depth,
                               std::size_t length, std::size_t base_tokens, bool vision, const Tape& tape) {
    std::ostringstream err;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& t = trace[i];
        const auto want = vision ? expected_vision_slot(i, depth, length, base_tokens)
                                 : expected_text_slot(i, depth, length, base_tokens);
        if (t.input_length != want.input_length || t.input.dim(0) != want.input_length)
            err << side << " layer " << i << ": length " << t.input_length << " expected " << want.input_length << "; ";
        if (t.source != want.source) err << side << " layer " << i << ": wrong slot source; ";
        if (t.prompt_begin != want.prompt_begin || t.prompt_count != length)
            err << side << " layer " << i << ": prompt slots misplaced; ";
        if (want.source == SlotSource::fresh) {
            if (!rows_equal(t.input, want.prompt_begin, plan.per_depth[i], 0, length))
                err << side << " layer " << i << ": prompt rows are not the depth-" << i << " prompts; ";
            if (!tape.contains(plan.per_depth[i])) err << side << " depth " << i << " prompts not on the tape; ";
        } else if (want.source == SlotSource::carried) {
            if (!rows_equal(t.input, want.prompt_begin, trace[i - 1].output, want.prompt_begin, length))
                err << side << " layer " << i << ": carried rows differ from previous outputs; ";
        }
        // prompt outputs of layer i are discarded when layer i+1 injects fresh prompts
        if (length == 0) continue;
        if (i + 1 < depth && max_abs_grad_rows(t.output, want.prompt_begin, length) != 0.0)
            err << side << " layer " << i << ": discarded prompt outputs reach the loss; ";
        if (i + 1 >= depth && i + 1 < trace.size() && max_abs_grad_rows(t.output, want.prompt_begin, length) == 0.0)
            err << side << " layer " << i << ": carried prompt outputs have no gradient; ";
    }
    return err.str();
}

/// Runs one forward/backward and checks both encoders. Empty string on success.
inline std::string check_slot_semantics(const Backbone& backbone, PromptKind kind, std::size_t depth,
                                        std::size_t length, std::uint64_t seed = 0) {
    const auto& c = backbone.config();
    auto state = init_prompts(kind, length, depth, backbone, InitMode::gaussian, CouplerConfig{}, seed);
    std::mt19937_64 rng(seed + 1);
    Tensor image = Tensor::randn({3, c.image_size, c.image_size}, rng, 1.0);
    auto tokens = tokenize("red circle", c.max_text_tokens);
    Tensor mask({c.image_size, c.image_size});
    for (std::size_t i = 0; i < mask.numel(); i += 3) mask.data()[i] = 1.0;

    ForwardTraces traces;
    auto out = forward(backbone, &state, image, tokens, true, {}, &traces);
    Tensor loss = combined_loss(out.logits(), mask, LossConfig{});
    for (auto& p : trainable_parameters(state, backbone, true)) p.tensor.zero_grad();
    backward(loss);
    Tape tape = Tape::from_root(loss);

    std::string err;
    const bool text = prompts_text(kind), vision = prompts_vision(kind);
    err += check_trace("text", traces.text, out.plans.textual, text ? depth : 0, text ? length : 0, tokens.size(),
                       false, tape);
    err += check_trace("vision", traces.vision, out.plans.visual, vision ? depth : 0, vision ? length : 0,
                       c.num_patches(), true, tape);
    const std::size_t eos = eos_position(tokens) + (text ? length : 0);
    if (out.text.eos_row != eos) err += "EOS row " + std::to_string(out.text.eos_row) + " expected " +
                                        std::to_string(eos) + "; ";
    if (out.image.patch_tokens.dim(0) != c.num_patches()) err += "patch token count changed; ";
    if (out.logits().shape() != Shape{c.image_size, c.image_size}) err += "logit shape wrong; ";
    return err;
}

}  // namespace ctxseg::testing
