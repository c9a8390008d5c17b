#pragma once

#include <functional>

#include "cffma/rng.hpp"
#include "cffma/tensor.hpp"

namespace cffma {

// Scalar-valued function of the tensor under test. The function must be pure:
// re-evaluating it with perturbed contents of x must be valid.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares autodiff gradients of f at x against central finite differences,
// element by element. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8). The step actually applied is read back
// from the f32 storage so the quotient uses the true perturbation.
double grad_check(const ScalarFn& f, Tensor& x, double eps = 1e-3);

// Same, but probes only up to max_elems distinct elements (sampled without
// replacement). Used for large parameter tensors where an exhaustive sweep
// is too slow.
double grad_check_sampled(const ScalarFn& f, Tensor& x, double eps, int64_t max_elems, Rng& rng);

}  // namespace cffma
