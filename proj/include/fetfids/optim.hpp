#pragma once

#include <cstdint>
#include <vector>

#include "fetfids/param_set.hpp"

namespace fetfids {

struct AdamWOptions {
  double base_lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moments for AdamW, aligned with the entries of one ParamSet.
struct OptState {
  AdamWOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;

  /// Zeroed moments shaped like `params` (buffers get empty placeholders).
  static OptState for_params(const ParamSet& params, AdamWOptions options = {});
};

/// One decoupled-weight-decay Adam update of every trainable entry:
///
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr·( m̂/(√v̂ + eps) + weight_decay·p )
///
/// with bias-corrected m̂, v̂. Throws StateError if any trainable entry has no
/// populated gradient or the state does not line up with `params`.
void adamw_step(ParamSet& params, OptState& opt, double lr);

/// Plain SGD: p ← p − lr·g on trainable entries; no momentum, no decay.
void sgd_step(ParamSet& params, double lr);

/// base_lr · gamma^epoch. Throws ConfigError unless 0 < gamma ≤ 1 and epoch ≥ 0.
double exp_lr_decay(double base_lr, double gamma, int epoch);

}  // namespace fetfids
