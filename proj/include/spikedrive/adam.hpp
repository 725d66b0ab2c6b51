#pragma once

#include "spikedrive/layers.hpp"

namespace spikedrive {

// Bias-corrected Adam moments for one parameter tensor.
template <typename T>
struct AdamState {
  Tensor<T> m, v;
  int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One update. Gradients must be finite; a non-finite value aborts the step.
template <typename T>
void adam_step(AdamState<T>& state, Tensor<T>& params, const Tensor<T>& grads) {
  contract(params.same_shape(grads) || grads.empty(),
           "adam_step: gradient shape mismatch");
  if (state.m.empty()) {
    state.m = Tensor<T>(params.shape());
    state.v = Tensor<T>(params.shape());
  }
  contract(state.m.same_shape(params), "adam_step: moment shape mismatch");
  if (!grads.empty() && !grads.all_finite())
    throw FlaggedError("adam_step: non-finite gradient, step aborted");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const int64_t n = params.size();
  for (int64_t i = 0; i < n; ++i) {
    const double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
    const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double mh = m / bc1;
    const double vh = v / bc2;
    params[i] -= static_cast<T>(state.lr * mh / (std::sqrt(vh) + state.eps));
  }
}

// Optimizer over a parameter registry; one Adam state per parameter.
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3) : lr_(lr) {}

  void set_lr(double lr) {
    lr_ = lr;
    for (auto& s : states_) s.lr = lr;
  }
  double lr() const { return lr_; }

  // Scales every gradient so the global L2 norm does not exceed max_norm.
  static void clip_global_norm(ParamRegistry<T>& reg, double max_norm) {
    double sq = 0;
    for (auto& p : reg.params()) {
      if (!p.value->has_grad()) continue;
      const Tensor<T>& g = p.value->grad;
      for (int64_t i = 0; i < g.size(); ++i)
        sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : reg.params()) {
      if (!p.value->has_grad()) continue;
      Tensor<T>& g = p.value->grad;
      for (int64_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }

  void step(ParamRegistry<T>& reg) {
    if (states_.size() != reg.params().size())
      states_.assign(reg.params().size(), AdamState<T>{});
    for (size_t i = 0; i < reg.params().size(); ++i) {
      auto& p = *reg.params()[i].value;
      states_[i].lr = lr_;
      adam_step(states_[i], p.value, p.grad);
    }
  }

  std::vector<AdamState<T>>& states() { return states_; }

 private:
  double lr_;
  std::vector<AdamState<T>> states_;
};

}  // namespace spikedrive
