#pragma once

#include <functional>

#include "mmpt/tensor.hpp"

namespace mmpt {

// Compares the gradient backward() produces against central finite differences
// of f at x0. f must return a scalar. Returns the worst relative error
// max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|).
//
// The numeric side re-evaluates f with single elements perturbed and never
// touches the autodiff tape, so it stays an independent reference.
Real finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                             const Tensor& x0, Real h = 1e-5);

}  // namespace mmpt
