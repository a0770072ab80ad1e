// SPDX-License-Identifier: Apache-2.0
#include "avssl/trainer/optim.hpp"

#include <cmath>
#include <numbers>

#include "avssl/core/error.hpp"

namespace avssl::trainer {

double cosine_lr(std::size_t step, std::size_t total, double start, double end) {
  if (total == 0) throw RangeError("cosine schedule needs total > 0");
  if (step > total) {
    throw RangeError("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * frac));
}

SchedulePlan SchedulePlan::from(const data::OptimConfig& o, std::size_t total_steps) {
  SchedulePlan p;
  p.encoder_start = o.lr_start;
  p.encoder_end = o.lr_end;
  p.predictor_lr = o.lr_start * o.predictor_lr_mult;
  p.total_steps = total_steps;
  p.warmup_steps = o.warmup_steps;
  return p;
}

double SchedulePlan::encoder_lr(std::size_t step) const {
  if (step > total_steps) step = total_steps;
  if (step < warmup_steps) {
    return encoder_start * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  return cosine_lr(step - warmup_steps, total_steps - warmup_steps, encoder_start, encoder_end);
}

std::vector<std::string> validate(const SchedulePlan& p) {
  std::vector<std::string> v;
  if (!(p.encoder_start > 0.0)) v.push_back("encoder start LR must be positive");
  if (p.encoder_end < 0.0) v.push_back("encoder end LR must be non-negative");
  if (!(p.predictor_lr > 0.0)) v.push_back("predictor LR must be positive");
  if (p.total_steps == 0) v.push_back("total steps must be positive");
  if (p.warmup_steps >= p.total_steps && p.total_steps > 0) v.push_back("warmup must be shorter than training");
  return v;
}

AdamHyper AdamHyper::from(const data::OptimConfig& o) {
  AdamHyper h;
  h.beta1 = o.beta1;
  h.beta2 = o.beta2;
  h.eps = o.eps;
  h.weight_decay = o.weight_decay;
  h.decoupled = o.decoupled_weight_decay;
  return h;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros(const nn::ParameterStore<T>& store, AdamHyper hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.var->value.shape());
    s.v.emplace_back(e.var->value.shape());
  }
  return s;
}

template <typename T>
void optimizer_step(nn::ParameterStore<T>& store, OptimizerState<T>& state, double lr_encoder, double lr_predictor) {
  auto& entries = store.entries();
  if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw ShapeError("optimizer state has " + std::to_string(state.m.size()) + " moments for " +
                     std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& node = *entries[i].var;
    if (state.m[i].shape() != node.value.shape() || state.v[i].shape() != node.value.shape()) {
      throw ShapeError("optimizer moment shape mismatch for '" + node.name + "'");
    }
    if (!node.has_grad()) continue;
    for (T g : node.grad_or_empty().values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + node.name + "'");
    }
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T wd = static_cast<T>(h.weight_decay);
  const T eps = static_cast<T>(h.eps);
  const T inv_bc2_sqrt = static_cast<T>(1.0 / std::sqrt(bc2));

  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& node = *entries[i].var;
    if (!node.has_grad()) continue;
    const double lr = entries[i].group == nn::ParamGroup::predictor ? lr_predictor : lr_encoder;
    const T step_size = static_cast<T>(lr / bc1);
    const T decay = static_cast<T>(lr * h.weight_decay);
    T* __restrict w = node.value.data();
    const T* __restrict g = node.grad_or_empty().data();
    T* __restrict m = state.m[i].data();
    T* __restrict v = state.v[i].data();
    const std::size_t n = node.value.size();
    for (std::size_t k = 0; k < n; ++k) {
      const T gk = h.decoupled ? g[k] : g[k] + wd * w[k];
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      const T denom = std::sqrt(v[k]) * inv_bc2_sqrt + eps;
      if (h.decoupled) w[k] -= decay * w[k];
      w[k] -= step_size * m[k] / denom;
    }
  }
}

double trust_ratio_scale(double weight_norm, double grad_norm, double coeff) {
  if (!(weight_norm > 0.0) || !(grad_norm > 0.0)) return 1.0;
  const double r = coeff * weight_norm / grad_norm;
  return r < 1.0 ? r : 1.0;
}

template <typename T>
void trust_ratio_clip(nn::ParameterStore<T>& store, double coeff) {
  if (!(coeff > 0.0)) throw ConfigError("trust coefficient must be positive");
  for (const auto& e : store.entries()) {
    auto& node = *e.var;
    if (!node.has_grad()) continue;
    double wn = 0.0, gn = 0.0;
    for (T x : node.value.values()) wn += static_cast<double>(x) * x;
    for (T x : node.grad().values()) gn += static_cast<double>(x) * x;
    const double s = trust_ratio_scale(std::sqrt(wn), std::sqrt(gn), coeff);
    if (s < 1.0) {
      for (T& x : node.grad().values()) x = static_cast<T>(x * s);
    }
  }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void optimizer_step<float>(nn::ParameterStore<float>&, OptimizerState<float>&, double, double);
template void optimizer_step<double>(nn::ParameterStore<double>&, OptimizerState<double>&, double, double);
template void trust_ratio_clip<float>(nn::ParameterStore<float>&, double);
template void trust_ratio_clip<double>(nn::ParameterStore<double>&, double);

}  // namespace avssl::trainer
