#include "fetfids/optim.hpp"

#include <cmath>
#include <string>

#include "fetfids/errors.hpp"

namespace fetfids {

OptState OptState::for_params(const ParamSet& params, AdamWOptions options) {
  OptState s;
  s.options = options;
  for (const auto& e : params) {
    s.first_moment.push_back(e.trainable() ? Tensor(e.value.shape()) : Tensor{});
    s.second_moment.push_back(e.trainable() ? Tensor(e.value.shape()) : Tensor{});
  }
  return s;
}

void adamw_step(ParamSet& params, OptState& opt, double lr) {
  if (opt.first_moment.size() != params.size() || opt.second_moment.size() != params.size()) {
    throw StateError("optimizer state has " + std::to_string(opt.first_moment.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  }
  bool any = false;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    any = true;
    if (!e.grad.same_shape(e.value)) throw StateError("adamw_step: gradient of '" + e.name + "' is not populated");
  }
  if (!any) throw StateError("adamw_step: no trainable parameters");

  const auto& o = opt.options;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    if (!e.trainable()) continue;
    auto& m = opt.first_moment[i];
    auto& v = opt.second_moment[i];
    if (!m.same_shape(e.value) || !v.same_shape(e.value)) {
      throw StateError("adamw_step: moment shape mismatch for '" + e.name + "'");
    }
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double g = e.grad[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double p = e.value[j];
      e.value[j] = p - lr * (m_hat / (std::sqrt(v_hat) + o.eps) + o.weight_decay * p);
    }
  }
}

void sgd_step(ParamSet& params, double lr) {
  for (auto& e : params) {
    if (!e.trainable()) continue;
    if (!e.grad.same_shape(e.value)) throw StateError("sgd_step: gradient of '" + e.name + "' is not populated");
    for (std::size_t j = 0; j < e.value.size(); ++j) e.value[j] -= lr * e.grad[j];
  }
}

double exp_lr_decay(double base_lr, double gamma, int epoch) {
  if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("lr gamma must be in (0, 1], got " + std::to_string(gamma));
  if (epoch < 0) throw ConfigError("epoch must be non-negative, got " + std::to_string(epoch));
  return base_lr * std::pow(gamma, epoch);
}

}  // namespace fetfids
