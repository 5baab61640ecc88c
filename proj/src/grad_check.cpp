#include "fetfids/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "fetfids/errors.hpp"

namespace fetfids {

namespace {

double checked_eval(const std::function<double()>& loss, const std::string& entry, std::size_t index) {
  const double v = loss();
  if (!std::isfinite(v)) {
    throw EvaluationError("grad_check: non-finite loss while perturbing '" + entry + "'[" + std::to_string(index) +
                          "]");
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(ParamSet& params, const std::function<double()>& loss, double eps, double tol) {
  GradCheckReport report;
  for (auto& e : params) {
    if (!e.trainable()) continue;
    if (!e.grad.same_shape(e.value)) throw StateError("grad_check: gradient of '" + e.name + "' is not populated");
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double saved = e.value[j];
      e.value[j] = saved + eps;
      const double up = checked_eval(loss, e.name, j);
      e.value[j] = saved - eps;
      const double down = checked_eval(loss, e.name, j);
      e.value[j] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = e.grad[j];
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++report.checked;
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_entry = e.name;
        report.worst_index = j;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace fetfids
