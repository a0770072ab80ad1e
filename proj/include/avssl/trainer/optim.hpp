// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "avssl/data/run_config.hpp"
#include "avssl/nn/parameter_store.hpp"

namespace avssl::trainer {

/// end + (start - end) * (1 + cos(pi * step / total)) / 2.
/// Throws RangeError unless 0 <= step <= total and total > 0.
double cosine_lr(std::size_t step, std::size_t total, double start, double end);

struct SchedulePlan {
  double encoder_start = 2e-4;
  double encoder_end = 0.0;
  double predictor_lr = 2e-3;
  std::size_t total_steps = 1;
  /// Linear ramp from 0 over the first warmup_steps, cosine afterwards.
  std::size_t warmup_steps = 0;

  static SchedulePlan from(const data::OptimConfig& o, std::size_t total_steps);
  double encoder_lr(std::size_t step) const;
  double predictor(std::size_t) const { return predictor_lr; }
};

std::vector<std::string> validate(const SchedulePlan& plan);

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
  bool decoupled = false;

  static AdamHyper from(const data::OptimConfig& o);
};

/// First and second moments, one pair per store entry in registration order.
template <typename T>
struct OptimizerState {
  AdamHyper hyper;
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;

  static OptimizerState zeros(const nn::ParameterStore<T>& store, AdamHyper hyper);
};

/// Bias-corrected adaptive-moment update. Predictor-group entries use
/// lr_predictor, all others lr_encoder. Weight decay is added to the gradient
/// unless hyper.decoupled. Entries without a gradient (branch not in the
/// loss) are left untouched. Every gradient is checked before any update;
/// a non-finite value throws NumericError naming the parameter.
template <typename T>
void optimizer_step(nn::ParameterStore<T>& store, OptimizerState<T>& state, double lr_encoder, double lr_predictor);

/// min(1, coeff * |w| / |g|); 1 when either norm is zero.
double trust_ratio_scale(double weight_norm, double grad_norm, double coeff);

/// Scales each entry's gradient by trust_ratio_scale (never up).
template <typename T>
void trust_ratio_clip(nn::ParameterStore<T>& store, double coeff);

}  // namespace avssl::trainer
