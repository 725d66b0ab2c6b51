#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spikedrive/lif.hpp"

namespace spikedrive {

// Residual shortcut placement: MS adds to membrane potentials before the
// spiking nonlinearity, SEW adds output spikes after it (integer counts).
enum class ResidualMode { MS, SEW };

inline const char* to_string(ResidualMode m) {
  return m == ResidualMode::MS ? "MS" : "SEW";
}
inline ResidualMode residual_mode_from(const std::string& s) {
  if (s == "MS") return ResidualMode::MS;
  if (s == "SEW") return ResidualMode::SEW;
  throw ContractError("unknown residual mode: " + s);
}

// ---------------------------------------------------------------------------
// forward-pass observers
// ---------------------------------------------------------------------------

// Collects per-layer MAC counts, input firing rates and timestep counts for
// the synaptic-operation energy model.
class Profiler {
 public:
  struct Entry {
    std::string id;
    std::string kind;  // "conv" | "fc"
    bool is_first = false;
    double macs_per_sample = 0;
    double fr_sum = 0;
    int64_t calls = 0;
  };

  void record(const std::string& id, const char* kind, bool is_first,
              double macs_per_sample, double input_nonzero_frac) {
    for (auto& e : entries_) {
      if (e.id == id) {
        e.fr_sum += input_nonzero_frac;
        e.calls += 1;
        return;
      }
    }
    Entry e;
    e.id = id;
    e.kind = kind;
    e.is_first = is_first;
    e.macs_per_sample = macs_per_sample;
    e.fr_sum = input_nonzero_frac;
    e.calls = 1;
    entries_.push_back(std::move(e));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// Verifies the binarity invariants of spiking activations during a forward
// pass; records the worst offender instead of throwing so a sweep can report
// every layer.
class SpikeAudit {
 public:
  template <typename T>
  void observe(const std::string& id, const Tensor<T>& t, int max_count) {
    ++observed_;
    for (int64_t i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(t[i]);
      bool ok = false;
      for (int k = 0; k <= max_count; ++k)
        if (v == static_cast<double>(k)) {
          ok = true;
          break;
        }
      if (!ok) {
        violations_.push_back(id + ": value " + std::to_string(v));
        return;
      }
    }
  }

  int64_t observed() const { return observed_; }
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  int64_t observed_ = 0;
  std::vector<std::string> violations_;
};

template <typename T>
struct Ctx {
  bool training = false;
  bool smooth_spikes = false;  // gradient-verification mode
  Profiler* profiler = nullptr;
  SpikeAudit* audit = nullptr;
};

template <typename T>
double nonzero_fraction(const Tensor<T>& t) {
  if (t.size() == 0) return 0.0;
  int64_t nz = 0;
  for (int64_t i = 0; i < t.size(); ++i)
    if (t[i] != T(0)) ++nz;
  return static_cast<double>(nz) / static_cast<double>(t.size());
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <typename T>
struct NamedParam {
  std::string name;
  Value<T> value;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::unique_ptr<Tensor<T>> tensor;  // stable address for layer state
};

template <typename T>
class ParamRegistry {
 public:
  Value<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& p : params_)
      contract(p.name != name, "duplicate parameter name: " + name);
    Value<T> v = parameter(std::move(init));
    params_.push_back({name, v});
    return v;
  }

  // Non-trainable layer state (running statistics); checkpointed alongside
  // the parameters.
  Tensor<T>* add_buffer(const std::string& name, Tensor<T> init) {
    for (const auto& b : buffers_)
      contract(b.name != name, "duplicate buffer name: " + name);
    buffers_.push_back({name, std::make_unique<Tensor<T>>(std::move(init))});
    return buffers_.back().tensor.get();
  }

  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedBuffer<T>>& buffers() { return buffers_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  Value<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.value;
    throw ContractError("unknown parameter: " + name);
  }

  void zero_grads() {
    for (auto& p : params_) p.value->zero_grad();
  }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
};

template <typename T>
Tensor<T> kaiming_init(Rng rng, std::vector<int64_t> shape, int64_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
              int64_t cin, int64_t cout, int64_t k, bool bias, int64_t stride = 1)
      : name_(name), stride_(stride), cin_(cin), cout_(cout), k_(k) {
    w_ = reg.add(name + ".w",
                 kaiming_init<T>(rng.split(name + ".w"), {cout, cin, k, k},
                                 cin * k * k));
    if (bias) b_ = reg.add(name + ".b", Tensor<T>({cout}));
  }

  Value<T> forward(const Ctx<T>& ctx, const Value<T>& x, bool first_layer = false) const {
    if (ctx.profiler) {
      const auto& s = x->value.shape();
      const int64_t oh = s[2] / stride_, ow = s[3] / stride_;
      ctx.profiler->record(name_, "conv", first_layer,
                           static_cast<double>(k_ * k_ * cin_ * cout_ * oh * ow),
                           nonzero_fraction(x->value));
    }
    return conv2d(x, w_, b_, stride_);
  }

  int64_t out_channels() const { return cout_; }

 private:
  std::string name_;
  Value<T> w_, b_;
  int64_t stride_ = 1, cin_ = 0, cout_ = 0, k_ = 3;
};

template <typename T>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(ParamRegistry<T>& reg, const std::string& name, int64_t c) {
    gamma_ = reg.add(name + ".gamma", Tensor<T>::full({c}, T(1)));
    beta_ = reg.add(name + ".beta", Tensor<T>({c}));
    running_mean_ = reg.add_buffer(name + ".running_mean", Tensor<T>({c}));
    running_var_ = reg.add_buffer(name + ".running_var", Tensor<T>::full({c}, T(1)));
  }

  Value<T> forward(const Ctx<T>& ctx, const Value<T>& x) {
    return batch_norm2d(x, gamma_, beta_, *running_mean_, *running_var_,
                        ctx.training);
  }

 private:
  Value<T> gamma_, beta_;
  Tensor<T>* running_mean_ = nullptr;
  Tensor<T>* running_var_ = nullptr;
};

// Conv2d -> BN -> LIF over model time (the encoder building block). The
// membrane carry is local to each forward call.
template <typename T>
class SpikingConv2d {
 public:
  SpikingConv2d() = default;
  SpikingConv2d(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
                int64_t cin, int64_t cout, const LifParams& lif, int64_t k = 3)
      : name_(name), conv_(reg, rng, name + ".conv", cin, cout, k, false),
        bn_(reg, name + ".bn", cout), lif_(lif) {}

  SpikeTensor<T> forward(Ctx<T>& ctx, const std::vector<Value<T>>& steps,
                         bool first_layer = false) {
    contract(!steps.empty(), "spiking block: empty sequence");
    Value<T> carry = constant(Tensor<T>(shape_after_conv(steps[0])));
    SpikeTensor<T> out;
    out.steps.reserve(steps.size());
    for (const auto& x : steps) {
      Value<T> u = bn_.forward(ctx, conv_.forward(ctx, x, first_layer));
      auto s = lif_step(lif_, carry, u, ctx.smooth_spikes);
      if (ctx.audit) ctx.audit->observe(name_, s.spikes->value, 1);
      out.steps.push_back(s.spikes);
      carry = s.carry;
    }
    return out;
  }

  int64_t out_channels() const { return conv_.out_channels(); }

 private:
  std::vector<int64_t> shape_after_conv(const Value<T>& x) const {
    auto s = x->value.shape();
    s[1] = conv_.out_channels();
    return s;
  }

  std::string name_;
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
  LifParams lif_;
};

// Residual block over membrane potentials:
//   out = LIF(P + BN(conv(LIF(P))))
// Input P is the pre-neuron potential sequence; the zero-branch case reduces
// to LIF(P).
template <typename T>
class MsResidualBlock {
 public:
  MsResidualBlock() = default;
  MsResidualBlock(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
                  int64_t c, const LifParams& lif)
      : name_(name), conv_(reg, rng, name + ".conv", c, c, 3, false),
        bn_(reg, name + ".bn", c), lif_(lif) {}

  SpikeTensor<T> forward(Ctx<T>& ctx, const std::vector<Value<T>>& potentials) {
    contract(!potentials.empty(), "ms residual: empty sequence");
    Value<T> carry_a = constant(Tensor<T>(potentials[0]->value.shape()));
    Value<T> carry_b = constant(Tensor<T>(potentials[0]->value.shape()));
    SpikeTensor<T> out;
    out.steps.reserve(potentials.size());
    for (const auto& p : potentials) {
      auto a = lif_step(lif_, carry_a, p, ctx.smooth_spikes);
      carry_a = a.carry;
      Value<T> branch = bn_.forward(ctx, conv_.forward(ctx, a.spikes));
      auto b = lif_step(lif_, carry_b, add(p, branch), ctx.smooth_spikes);
      carry_b = b.carry;
      if (ctx.audit) ctx.audit->observe(name_, b.spikes->value, 1);
      out.steps.push_back(b.spikes);
    }
    return out;
  }

 private:
  std::string name_;
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
  LifParams lif_;
};

// Residual block over output spikes:
//   out = LIF(BN(conv(s))) + s
// The sum is an integer count in {0,1,2}; downstream convolutions consume the
// counts unchanged.
template <typename T>
class SewResidualBlock {
 public:
  SewResidualBlock() = default;
  SewResidualBlock(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
                   int64_t c, const LifParams& lif)
      : name_(name), conv_(reg, rng, name + ".conv", c, c, 3, false),
        bn_(reg, name + ".bn", c), lif_(lif) {}

  std::vector<Value<T>> forward(Ctx<T>& ctx, const std::vector<Value<T>>& spikes) {
    contract(!spikes.empty(), "sew residual: empty sequence");
    Value<T> carry = constant(Tensor<T>(spikes[0]->value.shape()));
    std::vector<Value<T>> out;
    out.reserve(spikes.size());
    for (const auto& s : spikes) {
      Value<T> u = bn_.forward(ctx, conv_.forward(ctx, s));
      auto b = lif_step(lif_, carry, u, ctx.smooth_spikes);
      carry = b.carry;
      Value<T> y = add(b.spikes, s);
      if (ctx.audit) ctx.audit->observe(name_, y->value, 2);
      out.push_back(y);
    }
    return out;
  }

 private:
  std::string name_;
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
  LifParams lif_;
};

// Channel projection (conv+BN) followed by a residual block in the configured
// shortcut mode. Accepts spikes, counts or real features; the projection is
// linear either way.
template <typename T>
class ResidualStage {
 public:
  ResidualStage() = default;
  ResidualStage(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
                int64_t cin, int64_t cout, const LifParams& lif, ResidualMode mode)
      : mode_(mode), proj_(reg, rng, name + ".proj", cin, cout, 3, false),
        proj_bn_(reg, name + ".proj_bn", cout) {
    if (mode == ResidualMode::MS)
      ms_ = MsResidualBlock<T>(reg, rng, name + ".res", cout, lif);
    else
      sew_in_ = SpikingConv2d<T>(reg, rng, name + ".spike", cout, cout, lif),
      sew_ = SewResidualBlock<T>(reg, rng, name + ".res", cout, lif);
  }

  std::vector<Value<T>> forward(Ctx<T>& ctx, const std::vector<Value<T>>& steps) {
    std::vector<Value<T>> p;
    p.reserve(steps.size());
    for (const auto& x : steps)
      p.push_back(proj_bn_.forward(ctx, proj_.forward(ctx, x)));
    if (mode_ == ResidualMode::MS) {
      auto s = ms_.forward(ctx, p);
      return s.steps;
    }
    auto s = sew_in_.forward(ctx, p);
    return sew_.forward(ctx, s.steps);
  }

 private:
  ResidualMode mode_ = ResidualMode::MS;
  Conv2dLayer<T> proj_;
  BatchNorm2dLayer<T> proj_bn_;
  MsResidualBlock<T> ms_;
  SpikingConv2d<T> sew_in_;
  SewResidualBlock<T> sew_;
};

template <typename T>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(ParamRegistry<T>& reg, const Rng& rng, const std::string& name,
             int64_t in, int64_t out, bool zero_init = false)
      : name_(name), in_(in), out_(out) {
    Tensor<T> w = zero_init ? Tensor<T>({out, in})
                            : kaiming_init<T>(rng.split(name + ".w"), {out, in}, in);
    w_ = reg.add(name + ".w", std::move(w));
    b_ = reg.add(name + ".b", Tensor<T>({out}));
  }

  Value<T> forward(const Ctx<T>& ctx, const Value<T>& x) const {
    if (ctx.profiler)
      ctx.profiler->record(name_, "fc", false,
                           static_cast<double>(in_ * out_),
                           nonzero_fraction(x->value));
    return dense(x, w_, b_);
  }

 private:
  std::string name_;
  Value<T> w_, b_;
  int64_t in_ = 0, out_ = 0;
};

}  // namespace spikedrive
