#pragma once

#include <cstddef>
#include <vector>

#include "ctxseg/tensor/tensor.hpp"

namespace ctxseg {

/// Effective prompts for one encoder: `per_depth[i]` is the [length, width]
/// block injected before layer i. depth() == J.
struct PromptPlan {
    std::size_t length = 0;
    std::vector<Tensor> per_depth;

    std::size_t depth() const { return per_depth.size(); }
    bool empty() const { return length == 0 || per_depth.empty(); }
};

enum class SlotSource {
    none,     // no prompt slots in this layer's input
    fresh,    // slots replaced by the depth-i parameters
    carried,  // slots are the previous layer's prompt outputs
};

struct LayerTrace {
    std::size_t layer = 0;
    std::size_t input_length = 0;
    std::size_t prompt_begin = 0;  // first prompt row in the layer input
    std::size_t prompt_count = 0;
    SlotSource source = SlotSource::none;
    Tensor input;
    Tensor output;
};

using SlotTrace = std::vector<LayerTrace>;

// Textual layer input: prompts occupy rows [0, B).
// Layer 0 receives the word embeddings W_0 alone; later layers receive the
// previous output whose first B rows are prompt slots. Below depth J those
// rows are discarded and replaced by fresh prompts; from J on they pass
// through unchanged.
Tensor inject_textual(std::size_t layer, const Tensor& previous, const PromptPlan& plan);

// Visual layer input: [c, E, P~] with prompts in the last B rows. The CLS
// row is never touched.
Tensor inject_visual(std::size_t layer, const Tensor& previous, const PromptPlan& plan);

// Origin of the prompt rows for layer `layer`.
SlotSource slot_source(std::size_t layer, const PromptPlan& plan);

}  // namespace ctxseg
