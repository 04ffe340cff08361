#include "ctxseg/prompts/injection.hpp"

#include "ctxseg/tensor/ops.hpp"

namespace ctxseg {

namespace {

void check_block(const Tensor& block, const PromptPlan& plan, const Tensor& previous) {
    if (block.rank() != 2 || block.dim(0) != plan.length || block.dim(1) != previous.dim(1)) {
        throw ShapeError("prompt block " + shape_to_string(block.shape()) + " does not fit " +
                         std::to_string(plan.length) + " slots of width " + std::to_string(previous.dim(1)));
    }
}

}  // namespace

SlotSource slot_source(std::size_t layer, const PromptPlan& plan) {
    if (plan.empty()) return SlotSource::none;
    return layer < plan.depth() ? SlotSource::fresh : SlotSource::carried;
}

Tensor inject_textual(std::size_t layer, const Tensor& previous, const PromptPlan& plan) {
    if (plan.empty() || layer >= plan.depth()) return previous;
    const Tensor& fresh = plan.per_depth[layer];
    check_block(fresh, plan, previous);
    if (layer == 0) return ops::concat_rows({fresh, previous});
    return ops::concat_rows({fresh, ops::slice_rows(previous, plan.length, previous.dim(0))});
}

Tensor inject_visual(std::size_t layer, const Tensor& previous, const PromptPlan& plan) {
    if (plan.empty() || layer >= plan.depth()) return previous;
    const Tensor& fresh = plan.per_depth[layer];
    check_block(fresh, plan, previous);
    if (layer == 0) return ops::concat_rows({previous, fresh});
    return ops::concat_rows({ops::slice_rows(previous, 0, previous.dim(0) - plan.length), fresh});
}

}  // namespace ctxseg
