#pragma once

#include "spikedrive/nn_ops.hpp"

namespace spikedrive {

// Leaky integrate-and-fire constants. The membrane recurrence is
//   U[t] = H[t-1] + X[t]
//   S[t] = 1 if U[t] - u_th >= 0 else 0
//   H[t] = u_reset * S[t] + beta * U[t] * (1 - S[t])
struct LifParams {
  double beta = 0.5;
  double u_th = 1.0;
  double u_reset = 0.0;
  double surrogate_width = 1.0;

  void validate() const {
    contract(beta >= 0.0 && beta < 1.0, "LifParams: beta must be in [0,1)");
    contract(u_th > u_reset, "LifParams: u_th must exceed u_reset");
    contract(surrogate_width > 0.0, "LifParams: surrogate width must be positive");
  }
};

template <typename T>
struct LifStep {
  Value<T> spikes;
  Value<T> carry;
};

// Binary activations over model time; the only signal between spiking layers.
template <typename T>
struct SpikeTensor {
  std::vector<Value<T>> steps;
  int64_t time_len() const { return static_cast<int64_t>(steps.size()); }
};

// One membrane update. Both outputs share the integrated potential; backward
// routes through the triangular surrogate, including the reset multiplexer.
// `smooth` swaps the hard threshold for the surrogate's antiderivative
// (gradient-verification mode only).
template <typename T>
LifStep<T> lif_step(const LifParams& params, const Value<T>& carry,
                    const Value<T>& x, bool smooth = false) {
  params.validate();
  contract(carry->value.same_shape(x->value), "lif_step: carry/input shape mismatch");
  contract(x->value.all_finite(), "lif_step: non-finite input potential");
  const int64_t n = x->value.size();
  const T beta = static_cast<T>(params.beta);
  const T u_th = static_cast<T>(params.u_th);
  const T u_reset = static_cast<T>(params.u_reset);
  const T width = static_cast<T>(params.surrogate_width);

  auto u = std::make_shared<Tensor<T>>(x->value.shape());
  Tensor<T> s_out(x->value.shape());
  Tensor<T> c_out(x->value.shape());
  {
    const T* pc = carry->value.data();
    const T* px = x->value.data();
    T* pu = u->data();
    T* ps = s_out.data();
    T* pn = c_out.data();
    const T w2 = T(2) * width * width;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T uv = pc[i] + px[i];
      pu[i] = uv;
      T s;
      if (smooth) {
        const T v = uv - u_th;
        if (v <= -width)
          s = T(0);
        else if (v >= width)
          s = T(1);
        else if (v <= T(0))
          s = (v + width) * (v + width) / w2;
        else
          s = T(1) - (width - v) * (width - v) / w2;
      } else {
        s = uv - u_th >= T(0) ? T(1) : T(0);
      }
      ps[i] = s;
      pn[i] = u_reset * s + beta * uv * (T(1) - s);
    }
  }

  // d spike / d U at the cached potential
  auto dtheta = [u_th, width](T uv) {
    return surrogate_backward(uv - u_th, width);
  };

  Value<T> spikes = make_node<T>(
      std::move(s_out), {carry, x}, [u, dtheta](Node<T>& self) {
        const T* gs = self.grad.data();
        const T* pu = u->data();
        const int64_t m = self.grad.size();
        for (int k = 0; k < 2; ++k) {
          Node<T>& p = *self.parents[k];
          if (!p.requires_grad) continue;
          T* gp = p.grad_buf().data();
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < m; ++i) gp[i] += gs[i] * dtheta(pu[i]);
        }
      });

  Value<T> new_carry = make_node<T>(
      std::move(c_out), {carry, x},
      [u, dtheta, beta, u_reset, u_th, width, smooth](Node<T>& self) {
        const T* gs = self.grad.data();
        const T* pu = u->data();
        const int64_t m = self.grad.size();
        const T w2 = T(2) * width * width;
        for (int k = 0; k < 2; ++k) {
          Node<T>& p = *self.parents[k];
          if (!p.requires_grad) continue;
          T* gp = p.grad_buf().data();
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < m; ++i) {
            const T uv = pu[i];
            T s;
            if (smooth) {
              const T v = uv - u_th;
              if (v <= -width)
                s = T(0);
              else if (v >= width)
                s = T(1);
              else if (v <= T(0))
                s = (v + width) * (v + width) / w2;
              else
                s = T(1) - (width - v) * (width - v) / w2;
            } else {
              s = uv - u_th >= T(0) ? T(1) : T(0);
            }
            const T dc = beta * (T(1) - s) + dtheta(uv) * (u_reset - beta * uv);
            gp[i] += gs[i] * dc;
          }
        }
      });

  return {spikes, new_carry};
}

// Fold lif_step over a sequence of input potentials. The initial carry is zero
// unless supplied by the caller.
template <typename T>
SpikeTensor<T> lif_sequence(const LifParams& params,
                            const std::vector<Value<T>>& inputs,
                            Value<T> carry = nullptr, bool smooth = false) {
  contract(!inputs.empty(), "lif_sequence: empty input sequence");
  for (const auto& in : inputs)
    contract(in->value.same_shape(inputs[0]->value),
             "lif_sequence: non-uniform input shapes");
  if (!carry) carry = constant(Tensor<T>(inputs[0]->value.shape()));
  SpikeTensor<T> out;
  out.steps.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto step = lif_step(params, carry, in, smooth);
    out.steps.push_back(step.spikes);
    carry = step.carry;
  }
  return out;
}

}  // namespace spikedrive
