#pragma once

#include <optional>

#include "cffma/tensor.hpp"

namespace cffma {

enum class PoolMode { Max, Avg };

// Elementwise with broadcasting: same shape, scalar against anything, or
// rank-2 against rank-2 with singleton dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// slope is a learnable 1-element tensor, one per module instance.
Tensor prelu(const Tensor& x, const Tensor& slope);
Tensor abs(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);

Tensor transpose(const Tensor& x);  // rank 2
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);        // rank 2
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end);   // rank 2
Tensor layer_of(const Tensor& stack, int64_t index);              // rank 3 -> rank 2

Tensor sum(const Tensor& x);   // -> [1], f64 accumulated
Tensor mean(const Tensor& x);  // -> [1]
// Reduces `axis` of a rank-2 tensor to a singleton. Max routes the gradient
// to the first index among ties.
Tensor pool_axis(const Tensor& x, int axis, PoolMode mode);
// Axis-normalized exponentials, stabilized by max subtraction. Rank 2.
Tensor softmax(const Tensor& x, int axis);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n)

// Dilated cross-correlation along time with zero padding so the output
// length equals the input length. x: (Cin,T), w: (Cout,Cin,K), K odd,
// bias: (Cout) or undefined.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation = 1);
Tensor conv1d(const Tensor& x, const Tensor& w, int dilation = 1);

// x: (T,Cin), w: (Cout,Cin), bias: (1,Cout) -> (T,Cout)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Normalizes the last axis of a rank-2 tensor to zero mean / unit variance,
// then applies the affine (gamma, beta), both shaped (1,C).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Uniform random tensor; param() leaf when requires_grad.
Tensor rand_uniform(Shape shape, class Rng& rng, float lo, float hi, bool requires_grad = false);

namespace detail {
// Assembles an op result; tape recording is skipped when grads are disabled
// or no parent participates in differentiation. `precise` is the op's f64
// shadow output, recorded inside a PreciseScope.
Tensor make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents, GradFn fn,
               std::optional<double> f64_shadow = std::nullopt,
               std::vector<double> precise = {});
}

namespace debug {
// Corrupts the sigmoid backward rule while true (negative testing only).
extern bool fault_injection;
}

}  // namespace cffma
