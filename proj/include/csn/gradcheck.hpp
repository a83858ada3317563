#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "csn/tensor.hpp"

namespace csn {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  std::string summary() const;
};

/// Compares tape gradients of a scalar function against central differences
/// (f(x + eps e) - f(x - eps e)) / 2 eps, coordinate by coordinate. The error
/// per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5,
                           double tol = 1e-4, double floor = 1e-3);

/// Same comparison for a tensor that lives inside `f` (e.g. a model
/// parameter): values are perturbed in place between evaluations.
GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor& target, double eps = 1e-5,
                                   double tol = 1e-4, double floor = 1e-3);

}  // namespace csn
