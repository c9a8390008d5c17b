#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cffma {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// Propagates the output gradient into the parents' gradient buffers.
// A null entry marks a parent that does not need a gradient.
using GradFn = std::function<void(const TensorImpl& out, const std::vector<float>& out_grad,
                                  const std::vector<std::vector<float>*>& parent_grads)>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a backward sweep reaches this node
    bool requires_grad = false;
    std::optional<double> scalar_f64;  // f64 shadow kept by scalar reductions
    // Exact f64 evaluation of the same op chain, recorded only inside a
    // PreciseScope. Finite-difference probes read it to dodge f32
    // quantization noise; the f32 path is untouched.
    std::shared_ptr<std::vector<double>> f64;
    std::vector<ImplPtr> parents;
    GradFn grad_fn;  // empty for leaves
};

}  // namespace detail

// Dense row-major f32 tensor. Handles share storage (copies are shallow);
// operations record a define-by-run tape through shared_ptr parent links, so
// the graph lives exactly as long as some result referencing it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from_data(Shape shape, std::vector<float> data);
    static Tensor scalar(double v);
    // Leaf with requires_grad set: the unit optimizers update.
    static Tensor param(Shape shape, std::vector<float> data);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    int64_t dim(int axis) const;
    int64_t numel() const;

    std::span<const float> data() const;
    // In-place edits are only safe on leaves (parameters, inputs).
    std::span<float> mutable_data();

    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    float item() const;
    // Exact value when the scalar came out of an f64-accumulated reduction.
    double item_f64() const;

    // Reverse-mode sweep from a scalar. Gradients of every node with
    // requires_grad accumulate until explicitly zeroed.
    void backward() const;

    detail::ImplPtr impl() const { return impl_; }

private:
    detail::ImplPtr impl_;
};

// Scoped, thread-local switch that stops ops from recording the tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Scoped, thread-local switch that makes ops carry an f64 shadow of their
// forward values, so scalar readouts via item_f64() are exact in double.
class PreciseScope {
public:
    PreciseScope();
    ~PreciseScope();
    PreciseScope(const PreciseScope&) = delete;
    PreciseScope& operator=(const PreciseScope&) = delete;
};

bool precise_enabled();

}  // namespace cffma
