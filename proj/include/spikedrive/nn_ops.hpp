#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "spikedrive/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spikedrive {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  contract(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out(a->value.shape());
  const int64_t n = out.size();
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor<T>& g = p.grad_buf();
      const T* gs = self.grad.data();
      T* gp = g.data();
      const int64_t m = g.size();
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < m; ++i) gp[i] += gs[i];
    }
  });
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  contract(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out(a->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T* gs = self.grad.data();
    const int64_t m = self.grad.size();
    if (self.parents[0]->requires_grad) {
      T* gp = self.parents[0]->grad_buf().data();
      for (int64_t i = 0; i < m; ++i) gp[i] += gs[i];
    }
    if (self.parents[1]->requires_grad) {
      T* gp = self.parents[1]->grad_buf().data();
      for (int64_t i = 0; i < m; ++i) gp[i] -= gs[i];
    }
  });
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  contract(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out(a->value.shape());
  const int64_t n = out.size();
  const T* pa = a->value.data();
  const T* pb = b->value.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T* gs = self.grad.data();
    const T* va = self.parents[0]->value.data();
    const T* vb = self.parents[1]->value.data();
    const int64_t m = self.grad.size();
    if (self.parents[0]->requires_grad) {
      T* gp = self.parents[0]->grad_buf().data();
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < m; ++i) gp[i] += gs[i] * vb[i];
    }
    if (self.parents[1]->requires_grad) {
      T* gp = self.parents[1]->grad_buf().data();
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < m; ++i) gp[i] += gs[i] * va[i];
    }
  });
}

// a*x + b with scalar constants; covers scale, negate and bias shifts.
template <typename T>
Value<T> affine(const Value<T>& x, T a, T b = T(0)) {
  Tensor<T> out(x->value.shape());
  const int64_t n = out.size();
  const T* px = x->value.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) po[i] = a * px[i] + b;
  return make_node<T>(std::move(out), {x}, [a](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* gs = self.grad.data();
    const int64_t m = self.grad.size();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) gp[i] += a * gs[i];
  });
}

template <typename T>
Value<T> scale(const Value<T>& x, T a) {
  return affine(x, a, T(0));
}

template <typename T>
Value<T> exp_op(const Value<T>& x) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->value[i]);
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    for (int64_t i = 0; i < self.grad.size(); ++i)
      gp[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Value<T> softplus(const Value<T>& x) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const T v = x->value[i];
    out[i] = v > T(20) ? v : std::log1p(std::exp(v));
  }
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* vx = self.parents[0]->value.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-vx[i]));
      gp[i] += self.grad[i] * s;
    }
  });
}

template <typename T>
Value<T> abs_op(const Value<T>& x) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(x->value[i]);
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* vx = self.parents[0]->value.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) {
      const T s = vx[i] > T(0) ? T(1) : (vx[i] < T(0) ? T(-1) : T(0));
      gp[i] += self.grad[i] * s;
    }
  });
}

template <typename T>
Value<T> relu(const Value<T>& x) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(T(0), x->value[i]);
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* vx = self.parents[0]->value.data();
    for (int64_t i = 0; i < self.grad.size(); ++i)
      if (vx[i] > T(0)) gp[i] += self.grad[i];
  });
}

// Clamp with pass-through gradient inside [lo, hi], zero outside.
template <typename T>
Value<T> clip(const Value<T>& x, T lo, T hi) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, x->value[i]));
  return make_node<T>(std::move(out), {x}, [lo, hi](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* vx = self.parents[0]->value.data();
    for (int64_t i = 0; i < self.grad.size(); ++i)
      if (vx[i] >= lo && vx[i] <= hi) gp[i] += self.grad[i];
  });
}

template <typename T>
Value<T> stop_gradient(const Value<T>& x) {
  return constant(x->value);
}

// ---------------------------------------------------------------------------
// spike nonlinearity
// ---------------------------------------------------------------------------

// Triangular surrogate: max(0, 1 - |u|/w) / w. Unit integral over u.
template <typename T>
inline T surrogate_backward(T u, T width) {
  contract(width > T(0), "surrogate width must be positive");
  const T a = T(1) - std::abs(u) / width;
  return a > T(0) ? a / width : T(0);
}

// Heaviside spike gate: forward emits 1 for x >= 0, else 0; backward uses the
// triangular surrogate. `smooth` replaces the forward step by the surrogate's
// antiderivative (a quadratic ramp) so finite differences of the forward match
// the backward rule exactly; it exists for gradient verification only.
template <typename T>
Value<T> spike_gate(const Value<T>& x, T width, bool smooth = false) {
  Tensor<T> out(x->value.shape());
  const int64_t n = out.size();
  const T* px = x->value.data();
  T* po = out.data();
  if (smooth) {
    const T w2 = T(2) * width * width;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T v = px[i];
      if (v <= -width)
        po[i] = T(0);
      else if (v >= width)
        po[i] = T(1);
      else if (v <= T(0))
        po[i] = (v + width) * (v + width) / w2;
      else
        po[i] = T(1) - (width - v) * (width - v) / w2;
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] >= T(0) ? T(1) : T(0);
  }
  return make_node<T>(std::move(out), {x}, [width](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T* vx = self.parents[0]->value.data();
    const T* gs = self.grad.data();
    const int64_t m = self.grad.size();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
      gp[i] += gs[i] * surrogate_backward(vx[i], width);
  });
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Value<T> sum_all(const Value<T>& x) {
  T acc = 0;
  for (int64_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T g = self.grad[0];
    const int64_t m = self.parents[0]->value.size();
    for (int64_t i = 0; i < m; ++i) gp[i] += g;
  });
}

template <typename T>
Value<T> mean_all(const Value<T>& x) {
  contract(x->value.size() > 0, "mean of empty tensor");
  return scale(sum_all(x), T(1) / static_cast<T>(x->value.size()));
}

template <typename T>
T scalar_value(const Value<T>& v) {
  contract(v->value.size() == 1, "scalar_value on non-scalar");
  return v->value[0];
}

// Mean squared error against a constant target.
template <typename T>
Value<T> mse_loss(const Value<T>& pred, const Tensor<T>& target) {
  contract(pred->value.same_shape(target), "mse_loss: shape mismatch");
  const int64_t n = pred->value.size();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T d = pred->value[i] - target[i];
    acc += d * d;
  }
  auto tgt = std::make_shared<Tensor<T>>(target);
  return make_node<T>(Tensor<T>::scalar(acc / static_cast<T>(n)), {pred},
                      [tgt](Node<T>& self) {
                        Node<T>& p = *self.parents[0];
                        T* gp = p.grad_buf().data();
                        const int64_t m = p.value.size();
                        const T g = self.grad[0] * T(2) / static_cast<T>(m);
                        for (int64_t i = 0; i < m; ++i)
                          gp[i] += g * (p.value[i] - (*tgt)[i]);
                      });
}

// Mean absolute error against a constant target, optionally weighted per
// element; with weights the sum is normalised by the total weight.
template <typename T>
Value<T> l1_loss(const Value<T>& pred, const Tensor<T>& target,
                 const Tensor<T>* weights = nullptr) {
  contract(pred->value.same_shape(target), "l1_loss: shape mismatch");
  const int64_t n = pred->value.size();
  T acc = 0, wsum = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T w = weights ? (*weights)[i] : T(1);
    acc += w * std::abs(pred->value[i] - target[i]);
    wsum += w;
  }
  const T denom = wsum > T(0) ? wsum : T(1);
  auto tgt = std::make_shared<Tensor<T>>(target);
  std::shared_ptr<Tensor<T>> wts =
      weights ? std::make_shared<Tensor<T>>(*weights) : nullptr;
  return make_node<T>(Tensor<T>::scalar(acc / denom), {pred},
                      [tgt, wts, denom](Node<T>& self) {
                        Node<T>& p = *self.parents[0];
                        T* gp = p.grad_buf().data();
                        const int64_t m = p.value.size();
                        const T g = self.grad[0] / denom;
                        for (int64_t i = 0; i < m; ++i) {
                          const T d = p.value[i] - (*tgt)[i];
                          const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                          const T w = wts ? (*wts)[i] : T(1);
                          gp[i] += g * w * s;
                        }
                      });
}

// Per-pixel cross entropy over the channel axis of [B, K, H, W] logits.
// labels: int32 [B*H*W] flattened, -1 = ignore (loss 0). Output [B, H, W].
template <typename T>
Value<T> ce_map(const Value<T>& logits, const Tensor<int32_t>& labels) {
  const auto& s = logits->value.shape();
  contract(s.size() == 4, "ce_map expects [B,K,H,W] logits");
  const int64_t B = s[0], K = s[1], H = s[2], W = s[3];
  contract(labels.size() == B * H * W, "ce_map: label count mismatch");
  Tensor<T> out({B, H, W});
  const T* pl = logits->value.data();
  const int64_t hw = H * W;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < B * hw; ++p) {
    const int64_t b = p / hw, q = p % hw;
    const int32_t lab = labels[p];
    if (lab < 0) {
      out[p] = T(0);
      continue;
    }
    T mx = pl[(b * K) * hw + q];
    for (int64_t k = 1; k < K; ++k)
      mx = std::max(mx, pl[(b * K + k) * hw + q]);
    T lse = 0;
    for (int64_t k = 0; k < K; ++k)
      lse += std::exp(pl[(b * K + k) * hw + q] - mx);
    lse = std::log(lse) + mx;
    out[p] = lse - pl[(b * K + lab) * hw + q];
  }
  auto labs = std::make_shared<Tensor<int32_t>>(labels);
  return make_node<T>(std::move(out), {logits}, [labs](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t B = s[0], K = s[1], H = s[2], W = s[3], hw = H * W;
    T* gp = p.grad_buf().data();
    const T* pl = p.value.data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t pos = 0; pos < B * hw; ++pos) {
      const int32_t lab = (*labs)[pos];
      const T g = gs[pos];
      if (lab < 0 || g == T(0)) continue;
      const int64_t b = pos / hw, q = pos % hw;
      T mx = pl[(b * K) * hw + q];
      for (int64_t k = 1; k < K; ++k)
        mx = std::max(mx, pl[(b * K + k) * hw + q]);
      T z = 0;
      for (int64_t k = 0; k < K; ++k)
        z += std::exp(pl[(b * K + k) * hw + q] - mx);
      for (int64_t k = 0; k < K; ++k) {
        const T soft = std::exp(pl[(b * K + k) * hw + q] - mx) / z;
        gp[(b * K + k) * hw + q] += g * (soft - (k == lab ? T(1) : T(0)));
      }
    }
  });
}

// Mean of the largest ceil(k_frac*n) elements. Ties resolved by lowest index
// so the selection is deterministic.
template <typename T>
Value<T> topk_mean(const Value<T>& x, double k_frac) {
  contract(k_frac > 0.0 && k_frac <= 1.0, "top-k fraction must be in (0,1]");
  const int64_t n = x->value.size();
  contract(n > 0, "top-k over empty tensor");
  const int64_t k =
      std::min<int64_t>(n, static_cast<int64_t>(std::ceil(k_frac * static_cast<double>(n))));
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const T* pv = x->value.data();
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [pv](int64_t a, int64_t b) {
                      if (pv[a] != pv[b]) return pv[a] > pv[b];
                      return a < b;
                    });
  idx.resize(static_cast<size_t>(k));
  T acc = 0;
  for (int64_t i : idx) acc += pv[i];
  auto sel = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_node<T>(Tensor<T>::scalar(acc / static_cast<T>(k)), {x},
                      [sel, k](Node<T>& self) {
                        T* gp = self.parents[0]->grad_buf().data();
                        const T g = self.grad[0] / static_cast<T>(k);
                        for (int64_t i : *sel) gp[i] += g;
                      });
}

// Sum of x at the given flat indices (duplicates accumulate).
template <typename T>
Value<T> gather_sum(const Value<T>& x, const std::vector<int64_t>& indices) {
  T acc = 0;
  for (int64_t i : indices) {
    contract(i >= 0 && i < x->value.size(), "gather_sum index out of range");
    acc += x->value[i];
  }
  auto sel = std::make_shared<std::vector<int64_t>>(indices);
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [sel](Node<T>& self) {
    T* gp = self.parents[0]->grad_buf().data();
    const T g = self.grad[0];
    for (int64_t i : *sel) gp[i] += g;
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Value<T> concat_channels(const std::vector<Value<T>>& xs) {
  contract(!xs.empty(), "concat of empty list");
  const auto& s0 = xs[0]->value.shape();
  contract(s0.size() == 4, "concat_channels expects [B,C,H,W]");
  int64_t ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape();
    contract(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
             "concat_channels: incompatible shapes");
    ctot += s[1];
  }
  const int64_t B = s0[0], H = s0[2], W = s0[3], hw = H * W;
  Tensor<T> out({B, ctot, H, W});
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int64_t C = x->value.dim(1);
    for (int64_t b = 0; b < B; ++b)
      std::memcpy(out.data() + (b * ctot + coff) * hw,
                  x->value.data() + b * C * hw, sizeof(T) * C * hw);
    coff += C;
  }
  std::vector<Value<T>> parents = xs;
  return make_node<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    const auto& so = self.value.shape();
    const int64_t B = so[0], ctot = so[1], hw = so[2] * so[3];
    int64_t coff = 0;
    for (auto& pp : self.parents) {
      const int64_t C = pp->value.dim(1);
      if (pp->requires_grad) {
        T* gp = pp->grad_buf().data();
        const T* gs = self.grad.data();
        for (int64_t b = 0; b < B; ++b) {
          const T* src = gs + (b * ctot + coff) * hw;
          T* dst = gp + b * C * hw;
          for (int64_t i = 0; i < C * hw; ++i) dst[i] += src[i];
        }
      }
      coff += C;
    }
  });
}

template <typename T>
Value<T> slice_channels(const Value<T>& x, int64_t c0, int64_t c1) {
  const auto& s = x->value.shape();
  contract(s.size() == 4 && c0 >= 0 && c1 > c0 && c1 <= s[1],
           "slice_channels: bad range");
  const int64_t B = s[0], C = s[1], hw = s[2] * s[3], Cs = c1 - c0;
  Tensor<T> out({B, Cs, s[2], s[3]});
  for (int64_t b = 0; b < B; ++b)
    std::memcpy(out.data() + b * Cs * hw, x->value.data() + (b * C + c0) * hw,
                sizeof(T) * Cs * hw);
  return make_node<T>(std::move(out), {x}, [c0, Cs](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
    for (int64_t b = 0; b < B; ++b) {
      T* dst = gp + (b * C + c0) * hw;
      const T* src = gs + b * Cs * hw;
      for (int64_t i = 0; i < Cs * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Value<T> slice_batch(const Value<T>& x, int64_t b0, int64_t b1) {
  const auto& s = x->value.shape();
  contract(s.size() >= 2 && b0 >= 0 && b1 > b0 && b1 <= s[0],
           "slice_batch: bad range");
  int64_t inner = 1;
  for (size_t d = 1; d < s.size(); ++d) inner *= s[d];
  std::vector<int64_t> so = s;
  so[0] = b1 - b0;
  Tensor<T> out(so);
  std::memcpy(out.data(), x->value.data() + b0 * inner,
              sizeof(T) * (b1 - b0) * inner);
  return make_node<T>(std::move(out), {x}, [b0, inner](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* gp = p.grad_buf().data() + b0 * inner;
    const T* gs = self.grad.data();
    const int64_t m = self.grad.size();
    for (int64_t i = 0; i < m; ++i) gp[i] += gs[i];
  });
}

template <typename T>
Value<T> stack_batch(const std::vector<Value<T>>& xs) {
  contract(!xs.empty(), "stack_batch: empty list");
  const auto& s0 = xs[0]->value.shape();
  int64_t btot = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape();
    contract(s.size() == s0.size(), "stack_batch: rank mismatch");
    for (size_t d = 1; d < s.size(); ++d)
      contract(s[d] == s0[d], "stack_batch: inner shape mismatch");
    btot += s[0];
  }
  std::vector<int64_t> so = s0;
  so[0] = btot;
  int64_t inner = 1;
  for (size_t d = 1; d < s0.size(); ++d) inner *= s0[d];
  Tensor<T> out(so);
  int64_t off = 0;
  for (const auto& x : xs) {
    std::memcpy(out.data() + off, x->value.data(), sizeof(T) * x->value.size());
    off += x->value.size();
  }
  std::vector<Value<T>> parents = xs;
  return make_node<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    const T* gs = self.grad.data();
    int64_t off = 0;
    for (auto& pp : self.parents) {
      const int64_t n = pp->value.size();
      if (pp->requires_grad) {
        T* gp = pp->grad_buf().data();
        for (int64_t i = 0; i < n; ++i) gp[i] += gs[off + i];
      }
      off += n;
    }
  });
}

// Split a [B, N] matrix by column range.
template <typename T>
Value<T> slice_cols(const Value<T>& x, int64_t n0, int64_t n1) {
  const auto& s = x->value.shape();
  contract(s.size() == 2 && n0 >= 0 && n1 > n0 && n1 <= s[1],
           "slice_cols: bad range");
  const int64_t B = s[0], N = s[1], Ns = n1 - n0;
  Tensor<T> out({B, Ns});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < Ns; ++j) out[b * Ns + j] = x->value[b * N + n0 + j];
  return make_node<T>(std::move(out), {x}, [n0, Ns](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const int64_t B = p.value.dim(0), N = p.value.dim(1);
    T* gp = p.grad_buf().data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < Ns; ++j)
        gp[b * N + n0 + j] += self.grad[b * Ns + j];
  });
}

// Broadcast a [B, C] vector over space to [B, C, H, W].
template <typename T>
Value<T> tile_spatial(const Value<T>& x, int64_t H, int64_t W) {
  const auto& s = x->value.shape();
  contract(s.size() == 2, "tile_spatial expects [B,C]");
  const int64_t B = s[0], C = s[1], hw = H * W;
  Tensor<T> out({B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T v = x->value[b * C + c];
      T* dst = out.data() + (b * C + c) * hw;
      std::fill(dst, dst + hw, v);
    }
  return make_node<T>(std::move(out), {x}, [hw](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
    const int64_t BC = p.value.size();
    for (int64_t i = 0; i < BC; ++i) {
      T acc = 0;
      const T* src = gs + i * hw;
      for (int64_t j = 0; j < hw; ++j) acc += src[j];
      gp[i] += acc;
    }
  });
}

// Spatial gather by a precomputed index map (output cell -> input cell flat
// spatial index, or -1 for zero fill). Used to re-sample BEV grids by ego
// motion; the geometry is constant so only values carry gradients.
template <typename T>
Value<T> warp_gather(const Value<T>& x, const std::vector<int64_t>& index_map) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "warp_gather expects [B,C,H,W]");
  const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
  contract(static_cast<int64_t>(index_map.size()) == hw,
           "warp_gather: index map size mismatch");
  Tensor<T> out(s);
  const T* px = x->value.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = px + bc * hw;
    T* dst = po + bc * hw;
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t j = index_map[p];
      dst[p] = j >= 0 ? src[j] : T(0);
    }
  }
  auto map = std::make_shared<std::vector<int64_t>>(index_map);
  return make_node<T>(std::move(out), {x}, [map](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t hw = s[2] * s[3], BC = s[0] * s[1];
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < BC; ++bc) {
      T* dst = gp + bc * hw;
      const T* src = gs + bc * hw;
      for (int64_t q = 0; q < hw; ++q) {
        const int64_t j = (*map)[q];
        if (j >= 0) dst[j] += src[q];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dense / matmul
// ---------------------------------------------------------------------------

// y = x * w^T + b for x [B, N], w [M, N], b [M].
template <typename T>
Value<T> dense(const Value<T>& x, const Value<T>& w, const Value<T>& b) {
  const auto& sx = x->value.shape();
  const auto& sw = w->value.shape();
  contract(sx.size() == 2 && sw.size() == 2 && sx[1] == sw[1],
           "dense: shape mismatch");
  const int64_t B = sx[0], N = sx[1], M = sw[0];
  contract(!b || (b->value.rank() == 1 && b->value.dim(0) == M),
           "dense: bias shape mismatch");
  Tensor<T> out({B, M});
  ECMap<T> X(x->value.data(), B, N);
  ECMap<T> Wm(w->value.data(), M, N);
  EMap<T> Y(out.data(), B, M);
  Y.noalias() = X * Wm.transpose();
  if (b)
    for (int64_t i = 0; i < B; ++i)
      for (int64_t j = 0; j < M; ++j) out[i * M + j] += b->value[j];
  std::vector<Value<T>> parents = b ? std::vector<Value<T>>{x, w, b}
                                    : std::vector<Value<T>>{x, w};
  return make_node<T>(std::move(out), std::move(parents), [B, N, M](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    ECMap<T> G(self.grad.data(), B, M);
    if (xn.requires_grad) {
      EMap<T> GX(xn.grad_buf().data(), B, N);
      ECMap<T> Wm(wn.value.data(), M, N);
      GX.noalias() += G * Wm;
    }
    if (wn.requires_grad) {
      EMap<T> GW(wn.grad_buf().data(), M, N);
      ECMap<T> X(xn.value.data(), B, N);
      GW.noalias() += G.transpose() * X;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* gb = self.parents[2]->grad_buf().data();
      for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < M; ++j) gb[j] += self.grad[i * M + j];
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

// Column buffer for a batch chunk: rows k = (ci*kh+i)*kw+j, cols (b,oh,ow).
template <typename T>
void im2col(const Tensor<T>& x, int64_t b0, int64_t nb, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* col) {
  const int64_t Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t K = Cin * kh * kw;
  const int64_t N = nb * OH * OW;
  const T* px = x.data();
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < K; ++k) {
    const int64_t ci = k / (kh * kw);
    const int64_t i = (k / kw) % kh;
    const int64_t j = k % kw;
    T* row = col + k * N;
    for (int64_t b = 0; b < nb; ++b) {
      const T* xc = px + ((b0 + b) * Cin + ci) * H * W;
      for (int64_t oh = 0; oh < OH; ++oh) {
        const int64_t ih = oh * stride - pad + i;
        T* dst = row + (b * OH + oh) * OW;
        if (ih < 0 || ih >= H) {
          std::fill(dst, dst + OW, T(0));
          continue;
        }
        const T* src = xc + ih * W;
        for (int64_t ow = 0; ow < OW; ++ow) {
          const int64_t iw = ow * stride - pad + j;
          dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
        }
      }
    }
  }
}

// Scatter-add a column-buffer gradient back onto the input tensor. Parallel
// over input channels so accumulation stays race-free and deterministic.
template <typename T>
void col2im_add(T* gx, const T* col, int64_t b0, int64_t nb, int64_t Cin,
                int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad, int64_t OH, int64_t OW) {
  const int64_t N = nb * OH * OW;
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < Cin; ++ci) {
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const int64_t k = (ci * kh + i) * kw + j;
        const T* row = col + k * N;
        for (int64_t b = 0; b < nb; ++b) {
          T* xc = gx + ((b0 + b) * Cin + ci) * H * W;
          for (int64_t oh = 0; oh < OH; ++oh) {
            const int64_t ih = oh * stride - pad + i;
            if (ih < 0 || ih >= H) continue;
            const T* src = row + (b * OH + oh) * OW;
            T* dst = xc + ih * W;
            for (int64_t ow = 0; ow < OW; ++ow) {
              const int64_t iw = ow * stride - pad + j;
              if (iw >= 0 && iw < W) dst[iw] += src[ow];
            }
          }
        }
      }
  }
}

inline int64_t conv_chunk_batches(int64_t K, int64_t per_batch, int64_t B) {
  const int64_t budget = int64_t(1) << 24;  // ~64 MB of f32 column buffer
  int64_t nb = budget / std::max<int64_t>(1, K * per_batch);
  return std::max<int64_t>(1, std::min(nb, B));
}

}  // namespace detail

// 2-d convolution, NCHW, weight [Cout, Cin, kh, kw], optional bias [Cout].
// im2col + GEMM; the column buffer is rebuilt in backward instead of cached.
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& b,
                int64_t stride = 1, int64_t pad = -1) {
  const auto& sx = x->value.shape();
  const auto& sw = w->value.shape();
  contract(sx.size() == 4 && sw.size() == 4, "conv2d expects 4-d tensors");
  contract(sx[1] == sw[1], "conv2d: channel mismatch");
  const int64_t B = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
  const int64_t Cout = sw[0], kh = sw[2], kw = sw[3];
  if (pad < 0) pad = kh / 2;  // same-size default for odd kernels, stride 1
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  contract(OH >= 1 && OW >= 1, "conv2d: input smaller than the kernel");
  const int64_t K = Cin * kh * kw;
  const int64_t per_batch = OH * OW;

  Tensor<T> out({B, Cout, OH, OW});
  const int64_t chunk = detail::conv_chunk_batches(K, per_batch, B);
  std::unique_ptr<T[]> col(new T[static_cast<size_t>(K * chunk * per_batch)]);
  std::unique_ptr<T[]> ybuf(new T[static_cast<size_t>(Cout * chunk * per_batch)]);
  for (int64_t b0 = 0; b0 < B; b0 += chunk) {
    const int64_t nb = std::min(chunk, B - b0);
    const int64_t N = nb * per_batch;
    detail::im2col(x->value, b0, nb, kh, kw, stride, pad, OH, OW, col.get());
    ECMap<T> Wm(w->value.data(), Cout, K);
    ECMap<T> Cm(col.get(), K, N);
    EMap<T> Ym(ybuf.get(), Cout, N);
    Ym.noalias() = Wm * Cm;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < nb * Cout; ++bc) {
      const int64_t bi = bc / Cout, c = bc % Cout;
      const T* src = ybuf.get() + c * N + bi * per_batch;
      T* dst = out.data() + ((b0 + bi) * Cout + c) * per_batch;
      std::memcpy(dst, src, sizeof(T) * per_batch);
    }
  }
  if (b) {
    contract(b->value.rank() == 1 && b->value.dim(0) == Cout,
             "conv2d: bias shape mismatch");
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * Cout; ++bc) {
      const T bias = b->value[bc % Cout];
      T* dst = out.data() + bc * per_batch;
      for (int64_t i = 0; i < per_batch; ++i) dst[i] += bias;
    }
  }

  std::vector<Value<T>> parents = b ? std::vector<Value<T>>{x, w, b}
                                    : std::vector<Value<T>>{x, w};
  auto bwd = [stride, pad, OH, OW](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    const auto& sx = xn.value.shape();
    const auto& sw = wn.value.shape();
    const int64_t B = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
    const int64_t Cout = sw[0], kh = sw[2], kw = sw[3];
    const int64_t K = Cin * kh * kw, per_batch = OH * OW;
    const int64_t chunk = detail::conv_chunk_batches(K, per_batch, B);
    std::unique_ptr<T[]> col(new T[static_cast<size_t>(K * chunk * per_batch)]);
    std::unique_ptr<T[]> gbuf(new T[static_cast<size_t>(Cout * chunk * per_batch)]);
    std::unique_ptr<T[]> gcol(new T[static_cast<size_t>(K * chunk * per_batch)]);
    T* gx = xn.requires_grad ? xn.grad_buf().data() : nullptr;
    T* gw = wn.requires_grad ? wn.grad_buf().data() : nullptr;
    for (int64_t b0 = 0; b0 < B; b0 += chunk) {
      const int64_t nb = std::min(chunk, B - b0);
      const int64_t N = nb * per_batch;
      // gather upstream gradient into [Cout x N]
#pragma omp parallel for schedule(static)
      for (int64_t bc = 0; bc < nb * Cout; ++bc) {
        const int64_t b = bc / Cout, c = bc % Cout;
        std::memcpy(gbuf.get() + c * N + b * per_batch,
                    self.grad.data() + ((b0 + b) * Cout + c) * per_batch,
                    sizeof(T) * per_batch);
      }
      ECMap<T> Gm(gbuf.get(), Cout, N);
      if (gw) {
        detail::im2col(xn.value, b0, nb, kh, kw, stride, pad, OH, OW, col.get());
        ECMap<T> Cm(col.get(), K, N);
        EMap<T> GW(gw, Cout, K);
        GW.noalias() += Gm * Cm.transpose();
      }
      if (gx) {
        ECMap<T> Wm(wn.value.data(), Cout, K);
        EMap<T> GC(gcol.get(), K, N);
        GC.noalias() = Wm.transpose() * Gm;
        detail::col2im_add(gx, gcol.get(), b0, nb, Cin, H, W, kh, kw, stride,
                           pad, OH, OW);
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* gb = self.parents[2]->grad_buf().data();
      const T* gs = self.grad.data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < Cout; ++c) {
          T acc = 0;
          const T* src = gs + (b * Cout + c) * per_batch;
          for (int64_t i = 0; i < per_batch; ++i) acc += src[i];
          gb[c] += acc;
        }
    }
  };
  return make_node<T>(std::move(out), std::move(parents), std::move(bwd));
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

template <typename T>
Value<T> max_pool2x2(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "max_pool2x2 expects [B,C,H,W]");
  contract(s[2] % 2 == 0 && s[3] % 2 == 0, "max_pool2x2 needs even spatial dims");
  const int64_t BC = s[0] * s[1], H = s[2], W = s[3], OH = H / 2, OW = W / 2;
  Tensor<T> out({s[0], s[1], OH, OW});
  auto argmax = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(BC * OH * OW));
  const T* px = x->value.data();
  T* po = out.data();
  int32_t* pa = argmax->data();
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* src = px + bc * H * W;
    T* dst = po + bc * OH * OW;
    int32_t* am = pa + bc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t i0 = (2 * oh) * W + 2 * ow;
        int64_t best = i0;
        if (src[i0 + 1] > src[best]) best = i0 + 1;
        if (src[i0 + W] > src[best]) best = i0 + W;
        if (src[i0 + W + 1] > src[best]) best = i0 + W + 1;
        dst[oh * OW + ow] = src[best];
        am[oh * OW + ow] = static_cast<int32_t>(best);
      }
  }
  return make_node<T>(std::move(out), {x}, [argmax](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t BC = s[0] * s[1], hw = s[2] * s[3];
    const int64_t ohw = self.value.dim(2) * self.value.dim(3);
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < BC; ++bc) {
      const int32_t* am = argmax->data() + bc * ohw;
      const T* src = gs + bc * ohw;
      T* dst = gp + bc * hw;
      for (int64_t i = 0; i < ohw; ++i) dst[am[i]] += src[i];
    }
  });
}

template <typename T>
Value<T> avg_pool2x2(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0,
           "avg_pool2x2 needs even spatial dims");
  const int64_t BC = s[0] * s[1], H = s[2], W = s[3], OH = H / 2, OW = W / 2;
  Tensor<T> out({s[0], s[1], OH, OW});
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* src = x->value.data() + bc * H * W;
    T* dst = out.data() + bc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t i0 = (2 * oh) * W + 2 * ow;
        dst[oh * OW + ow] =
            (src[i0] + src[i0 + 1] + src[i0 + W] + src[i0 + W + 1]) * T(0.25);
      }
  }
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t BC = s[0] * s[1], H = s[2], W = s[3], OH = H / 2, OW = W / 2;
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < BC; ++bc) {
      const T* src = gs + bc * OH * OW;
      T* dst = gp + bc * H * W;
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          const T g = src[oh * OW + ow] * T(0.25);
          const int64_t i0 = (2 * oh) * W + 2 * ow;
          dst[i0] += g;
          dst[i0 + 1] += g;
          dst[i0 + W] += g;
          dst[i0 + W + 1] += g;
        }
    }
  });
}

template <typename T>
Value<T> upsample_nearest2(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "upsample_nearest2 expects [B,C,H,W]");
  const int64_t BC = s[0] * s[1], H = s[2], W = s[3];
  Tensor<T> out({s[0], s[1], 2 * H, 2 * W});
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T* src = x->value.data() + bc * H * W;
    T* dst = out.data() + bc * 4 * H * W;
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const T v = src[h * W + w];
        const int64_t o = (2 * h) * (2 * W) + 2 * w;
        dst[o] = v;
        dst[o + 1] = v;
        dst[o + 2 * W] = v;
        dst[o + 2 * W + 1] = v;
      }
  }
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t BC = s[0] * s[1], H = s[2], W = s[3];
    T* gp = p.grad_buf().data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < BC; ++bc) {
      const T* src = gs + bc * 4 * H * W;
      T* dst = gp + bc * H * W;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const int64_t o = (2 * h) * (2 * W) + 2 * w;
          dst[h * W + w] += src[o] + src[o + 1] + src[o + 2 * W] + src[o + 2 * W + 1];
        }
    }
  });
}

template <typename T>
Value<T> global_avg_pool(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "global_avg_pool expects [B,C,H,W]");
  const int64_t BC = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> out({s[0], s[1]});
  for (int64_t bc = 0; bc < BC; ++bc) {
    T acc = 0;
    const T* src = x->value.data() + bc * hw;
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    out[bc] = acc / static_cast<T>(hw);
  }
  return make_node<T>(std::move(out), {x}, [hw](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* gp = p.grad_buf().data();
    const int64_t BC = self.value.size();
    for (int64_t bc = 0; bc < BC; ++bc) {
      const T g = self.grad[bc] / static_cast<T>(hw);
      T* dst = gp + bc * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

// Batch normalization over (B, H, W) per channel. Running statistics are layer
// state owned by the caller and updated in place when training.
template <typename T>
Value<T> batch_norm2d(const Value<T>& x, const Value<T>& gamma,
                      const Value<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "batch_norm2d expects [B,C,H,W]");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  contract(gamma->value.size() == C && beta->value.size() == C,
           "batch_norm2d: affine parameter size mismatch");
  contract(running_mean.size() == C && running_var.size() == C,
           "batch_norm2d: running stats size mismatch");
  const int64_t m = B * H * W, hw = H * W;
  auto mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{C});
  auto inv_std = std::make_shared<Tensor<T>>(std::vector<int64_t>{C});
  const T* px = x->value.data();
  if (training) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      T mu = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* src = px + (b * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) mu += src[i];
      }
      mu /= static_cast<T>(m);
      T var = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* src = px + (b * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      (*mean)[c] = mu;
      (*inv_std)[c] = T(1) / std::sqrt(var + eps);
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*inv_std)[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(s);
  T* po = out.data();
  const T* pg = gamma->value.data();
  const T* pb = beta->value.data();
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const int64_t c = bc % C;
    const T mu = (*mean)[c], is = (*inv_std)[c], ga = pg[c], be = pb[c];
    const T* src = px + bc * hw;
    T* dst = po + bc * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = ga * (src[i] - mu) * is + be;
  }
  auto bwd = [mean, inv_std, training, m, hw](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& gn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const auto& s = xn.value.shape();
    const int64_t B = s[0], C = s[1];
    const T* px = xn.value.data();
    const T* gs = self.grad.data();
    const T* pg = gn.value.data();
    // per-channel sums of dy and dy*xhat
    std::vector<T> sum_dy(C, T(0)), sum_dyx(C, T(0));
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      T a = 0, bsum = 0;
      const T mu = (*mean)[c], is = (*inv_std)[c];
      for (int64_t b = 0; b < B; ++b) {
        const T* gsrc = gs + (b * C + c) * hw;
        const T* xsrc = px + (b * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          a += gsrc[i];
          bsum += gsrc[i] * (xsrc[i] - mu) * is;
        }
      }
      sum_dy[c] = a;
      sum_dyx[c] = bsum;
    }
    if (gn.requires_grad) {
      T* gg = gn.grad_buf().data();
      for (int64_t c = 0; c < C; ++c) gg[c] += sum_dyx[c];
    }
    if (bn.requires_grad) {
      T* gb = bn.grad_buf().data();
      for (int64_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
    }
    if (xn.requires_grad) {
      T* gx = xn.grad_buf().data();
#pragma omp parallel for schedule(static)
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const int64_t c = bc % C;
        const T mu = (*mean)[c], is = (*inv_std)[c], ga = pg[c];
        const T* gsrc = gs + bc * hw;
        const T* xsrc = px + bc * hw;
        T* dst = gx + bc * hw;
        if (training) {
          const T k = ga * is / static_cast<T>(m);
          for (int64_t i = 0; i < hw; ++i) {
            const T xh = (xsrc[i] - mu) * is;
            dst[i] += k * (static_cast<T>(m) * gsrc[i] - sum_dy[c] -
                           xh * sum_dyx[c]);
          }
        } else {
          const T k = ga * is;
          for (int64_t i = 0; i < hw; ++i) dst[i] += k * gsrc[i];
        }
      }
    }
  };
  return make_node<T>(std::move(out), {x, gamma, beta}, std::move(bwd));
}

// Per-pixel softmax over the channel axis of [B, C, H, W].
template <typename T>
Value<T> softmax_channels(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "softmax_channels expects [B,C,H,W]");
  const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
  Tensor<T> out(s);
  const T* px = x->value.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < B * hw; ++p) {
    const int64_t b = p / hw, q = p % hw;
    T mx = px[(b * C) * hw + q];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, px[(b * C + c) * hw + q]);
    T z = 0;
    for (int64_t c = 0; c < C; ++c) {
      const T e = std::exp(px[(b * C + c) * hw + q] - mx);
      po[(b * C + c) * hw + q] = e;
      z += e;
    }
    for (int64_t c = 0; c < C; ++c) po[(b * C + c) * hw + q] /= z;
  }
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
    T* gp = p.grad_buf().data();
    const T* y = self.value.data();
    const T* gs = self.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t pos = 0; pos < B * hw; ++pos) {
      const int64_t b = pos / hw, q = pos % hw;
      T dot = 0;
      for (int64_t c = 0; c < C; ++c)
        dot += gs[(b * C + c) * hw + q] * y[(b * C + c) * hw + q];
      for (int64_t c = 0; c < C; ++c) {
        const int64_t i = (b * C + c) * hw + q;
        gp[i] += y[i] * (gs[i] - dot);
      }
    }
  });
}

// Mean |value| across channels: [B, C, H, W] -> [B, 1, H, W].
template <typename T>
Value<T> channel_abs_mean(const Value<T>& x) {
  const auto& s = x->value.shape();
  contract(s.size() == 4, "channel_abs_mean expects [B,C,H,W]");
  const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
  Tensor<T> out({B, 1, s[2], s[3]});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t q = 0; q < hw; ++q) {
      T acc = 0;
      for (int64_t c = 0; c < C; ++c)
        acc += std::abs(x->value[(b * C + c) * hw + q]);
      out[b * hw + q] = acc / static_cast<T>(C);
    }
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto& s = p.value.shape();
    const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
    T* gp = p.grad_buf().data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t q = 0; q < hw; ++q) {
        const T g = self.grad[b * hw + q] / static_cast<T>(C);
        for (int64_t c = 0; c < C; ++c) {
          const int64_t i = (b * C + c) * hw + q;
          const T v = p.value[i];
          gp[i] += g * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
        }
      }
  });
}

// Average a list of equally shaped values.
template <typename T>
Value<T> mean_of(const std::vector<Value<T>>& xs) {
  contract(!xs.empty(), "mean_of: empty list");
  Value<T> acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, T(1) / static_cast<T>(xs.size()));
}

}  // namespace spikedrive
