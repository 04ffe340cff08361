#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxseg {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorImpl;

// A recorded operation: the inputs it read and the rule that pushes the
// output gradient back into them.
struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(std::span<const double> grad_out)> backward;
    const char* op = "";
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty means "no gradient"
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

/// Dense row-major float64 tensor with shared storage.
///
/// Copies alias the same buffer (handle semantics); use clone() for a
/// deep copy. Operations on tensors that require grad record a Node so
/// backward() can walk the graph in reverse topological order.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev);
    static Tensor parameter(Shape shape, std::vector<double> data);

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool is_leaf() const { return impl_->grad_fn == nullptr; }
    const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

    Tensor clone() const;
    Tensor detach() const;

    TensorImpl* get() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    bool same(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(std::span<const double>)>, const char*);
};

/// Grad recording is on by default; NoGradGuard disables it for the
/// current thread within its scope.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds the result of an operation. When recording is enabled and any
// input requires grad, the result carries a Node with the given rule;
// the rule only has to accumulate into inputs that require grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward, const char* op);

// Adds `g` into t's gradient buffer, allocating it on first touch.
// A tensor that does not require grad never accumulates.
void accumulate_grad(TensorImpl& t, std::span<const double> g);
std::span<double> grad_buffer(TensorImpl& t);

/// Reverse-topological view of the graph reachable from a root.
class Tape {
public:
    static Tape from_root(const Tensor& root);

    // Nodes ordered so that every tensor's inputs precede it.
    const std::vector<TensorImpl*>& order() const { return order_; }
    bool contains(const Tensor& t) const;
    std::size_t size() const { return order_.size(); }

private:
    std::vector<TensorImpl*> order_;
};

/// Seeds root.grad with 1 and propagates gradients to every reachable
/// tensor that requires grad. Leaf gradients accumulate across calls.
void backward(const Tensor& root);

}  // namespace ctxseg
