#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "fetfids/param_set.hpp"

namespace fetfids {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares the gradients already stored in `params` against central finite
/// differences of `loss`:
///
///   numeric = (f(p+eps) − f(p−eps)) / (2·eps)
///   rel     = |a − n| / max(1e-8, |a| + |n|)
///
/// Every trainable scalar is perturbed in place and restored bit-exactly.
/// `loss` must read the current values of `params`. Throws EvaluationError if
/// `loss` returns a non-finite value, StateError if a gradient is missing.
GradCheckReport grad_check(ParamSet& params, const std::function<double()>& loss, double eps = 1e-6,
                           double tol = 1e-4);

}  // namespace fetfids
