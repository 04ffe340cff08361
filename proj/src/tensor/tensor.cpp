#include "ctxseg/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ctxseg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= impl_->shape.size()) {
        throw ShapeError("axis " + std::to_string(i) + " out of range for shape " +
                         shape_to_string(impl_->shape));
    }
    return impl_->shape[i];
}

double Tensor::item() const {
    if (impl_->data.size() != 1) {
        throw ShapeError("item() on non-scalar tensor " + shape_to_string(impl_->shape));
    }
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = on;
    if (!on) impl_->grad.clear();
    return *this;
}

Tensor Tensor::clone() const {
    Tensor t(impl_->shape, impl_->data);
    t.impl_->requires_grad = impl_->requires_grad && is_leaf();
    return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward, const char* op) {
    Tensor out(std::move(shape), std::move(data));
    if (!g_grad_enabled) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    auto node = std::make_shared<Node>();
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    node->op = op;
    out.impl_->grad_fn = std::move(node);
    out.impl_->requires_grad = true;
    return out;
}

std::span<double> grad_buffer(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

void accumulate_grad(TensorImpl& t, std::span<const double> g) {
    if (!t.requires_grad) return;
    auto buf = grad_buffer(t);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Tape Tape::from_root(const Tensor& root) {
    Tape tape;
    std::unordered_set<TensorImpl*> seen;
    // Iterative post-order DFS; each frame remembers the next input to visit.
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        const auto& node = t->grad_fn;
        if (node && next < node->inputs.size()) {
            TensorImpl* in = node->inputs[next++].get();
            if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
            continue;
        }
        tape.order_.push_back(t);
        stack.pop_back();
    }
    return tape;
}

bool Tape::contains(const Tensor& t) const {
    return std::find(order_.begin(), order_.end(), t.get()) != order_.end();
}

void backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw ContractError("backward() needs a scalar root, got shape " +
                            shape_to_string(root.shape()));
    }
    if (!root.requires_grad()) return;
    Tape tape = Tape::from_root(root);
    for (TensorImpl* t : tape.order()) {
        if (t->grad_fn) t->grad.clear();
    }
    grad_buffer(*root.get())[0] += 1.0;
    const auto& order = tape.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (t->grad_fn && !t->grad.empty()) t->grad_fn->backward(t->grad);
    }
}

}  // namespace ctxseg
