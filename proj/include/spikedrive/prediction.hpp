#pragma once

#include "spikedrive/perception.hpp"

namespace spikedrive {

enum class PathwayMode { Dual, Single };

inline const char* to_string(PathwayMode m) {
  return m == PathwayMode::Dual ? "dual" : "single";
}
inline PathwayMode pathway_mode_from(const std::string& s) {
  if (s == "dual") return PathwayMode::Dual;
  if (s == "single") return PathwayMode::Single;
  throw ContractError("unknown pathway mode: " + s);
}

enum class LatentMode { Sample, Mean };

// Chronological window of BEV features with fixed capacity (the number of
// past frames); pushing past capacity drops the oldest entry.
template <typename T>
class HistoryBuffer {
 public:
  HistoryBuffer() = default;
  explicit HistoryBuffer(int64_t capacity) : capacity_(capacity) {
    contract(capacity >= 1, "history capacity must be positive");
  }

  void push(const Value<T>& x) {
    if (!items_.empty())
      contract(x->value.same_shape(items_[0]->value),
               "history: mismatched feature shapes");
    items_.push_back(x);
    if (static_cast<int64_t>(items_.size()) > capacity_)
      items_.erase(items_.begin());
  }

  bool empty() const { return items_.empty(); }
  int64_t size() const { return static_cast<int64_t>(items_.size()); }
  int64_t capacity() const { return capacity_; }
  const Value<T>& front() const { return items_.front(); }
  const Value<T>& back() const { return items_.back(); }
  const std::vector<Value<T>>& items() const { return items_; }

  // Channel-wise concatenation, oldest first, left-padded with zeros when the
  // buffer is not yet full so the pathway convolution sees a fixed width.
  Value<T> stacked() const {
    contract(!items_.empty(), "history: empty buffer");
    std::vector<Value<T>> parts;
    const int64_t missing = capacity_ - size();
    for (int64_t i = 0; i < missing; ++i)
      parts.push_back(constant(Tensor<T>(items_[0]->value.shape())));
    for (const auto& it : items_) parts.push_back(it);
    return parts.size() == 1 ? parts[0] : concat_channels(parts);
  }

 private:
  int64_t capacity_ = 1;
  std::vector<Value<T>> items_;
};

struct PredictionConfig {
  int64_t channels = 32;   // BEV feature width
  int64_t latent_len = 32;
  int64_t history = 3;     // past frames (buffer capacity)
  int64_t horizon = 4;     // future steps
  PathwayMode pathway = PathwayMode::Dual;
};

// Gaussian uncertainty parameters for the present frame plus the sampled
// latent; sigma is a standard deviation, softplus-floored for positivity.
template <typename T>
struct UncertaintyLatent {
  Value<T> mu;     // [1, L]
  Value<T> sigma;  // [1, L]
};

// Four MS-residual spiking blocks, 2x2 average pooling, a 1x1 spiking conv
// that doubles the channel count, then global average pooling; the resulting
// vector splits into mu and raw-sigma halves.
template <typename T>
class UncertaintyHead {
 public:
  UncertaintyHead() = default;
  UncertaintyHead(ParamRegistry<T>& reg, const Rng& rng,
                  const PredictionConfig& cfg, const LifParams& lif)
      : latent_len_(cfg.latent_len) {
    contract(cfg.latent_len >= 1, "latent length must be positive");
    for (int i = 0; i < 4; ++i)
      blocks_.push_back(ResidualStage<T>(reg, rng,
                                         "latent.b" + std::to_string(i),
                                         cfg.channels, cfg.channels, lif,
                                         ResidualMode::MS));
    projector_ = SpikingConv2d<T>(reg, rng, "latent.proj", cfg.channels,
                                  2 * cfg.latent_len, lif, 1);
  }

  UncertaintyLatent<T> forward(Ctx<T>& ctx, const Value<T>& x_t) {
    std::vector<Value<T>> seq{x_t};
    for (auto& b : blocks_) seq = b.forward(ctx, seq);
    Value<T> pooled = avg_pool2x2(seq[0]);
    Value<T> spk = projector_.forward(ctx, {pooled}).steps[0];
    Value<T> vec = global_avg_pool(spk);  // [1, 2L]
    contract(vec->value.dim(1) % 2 == 0, "latent vector length must be even");
    UncertaintyLatent<T> out;
    out.mu = slice_cols(vec, 0, latent_len_);
    out.sigma = affine(softplus(slice_cols(vec, latent_len_, 2 * latent_len_)),
                       T(1), T(1e-5));
    return out;
  }

 private:
  int64_t latent_len_ = 32;
  std::vector<ResidualStage<T>> blocks_;
  SpikingConv2d<T> projector_;
};

// Reparameterised draw: eta = mu + sigma (.) eps with eps ~ N(0, I) in sample
// mode, eta = mu in mean mode.
template <typename T>
Value<T> sample_latent(const UncertaintyLatent<T>& lat, Rng& rng,
                       LatentMode mode) {
  contract(lat.mu->value.same_shape(lat.sigma->value),
           "sample_latent: mu/sigma shape mismatch");
  if (mode == LatentMode::Mean) return lat.mu;
  Tensor<T> eps(lat.mu->value.shape());
  for (int64_t i = 0; i < eps.size(); ++i)
    eps[i] = static_cast<T>(rng.normal());
  return add(lat.mu, mul(lat.sigma, constant(std::move(eps))));
}

// Predicted BEV features for the next steps; each element is an integer count
// in {0,1,2} (sum of two binary pathways).
template <typename T>
struct FuturePrediction {
  std::vector<Value<T>> steps;
};

// Dual-pathway predictor (recursively applied for rollout):
//   x^_{t+1} = LIF(BN(Conv(concat(x_t, eta_t)))) (+) LIF(BN(Conv(x_{0:t})))
// The history pathway's LIF membrane starts from the first BEV feature.
template <typename T>
class DualPathwayPredictor {
 public:
  DualPathwayPredictor() = default;
  DualPathwayPredictor(ParamRegistry<T>& reg, const Rng& rng,
                       const PredictionConfig& cfg, const LifParams& lif)
      : cfg_(cfg), lif_(lif),
        latent_head_(reg, rng, cfg, lif),
        present_conv_(reg, rng, "pred.present.conv", cfg.channels + cfg.latent_len,
                      cfg.channels, 3, false),
        present_bn_(reg, "pred.present.bn", cfg.channels),
        history_conv_(reg, rng, "pred.history.conv", cfg.channels * cfg.history,
                      cfg.channels, 1, false),
        history_bn_(reg, "pred.history.bn", cfg.channels) {
    for (int i = 0; i < 2; ++i)
      mix_.push_back(ResidualStage<T>(reg, rng, "pred.mix" + std::to_string(i),
                                      cfg.channels, cfg.channels, lif,
                                      ResidualMode::MS));
  }

  // Rolls the predictor n steps forward. The caller's buffer is copied, never
  // mutated. Returns the raw dual-pathway outputs (counts in {0,1,2}).
  FuturePrediction<T> rollout(Ctx<T>& ctx, const HistoryBuffer<T>& history,
                              int64_t n, LatentMode mode, Rng rng) {
    contract(n >= 1, "rollout horizon must be at least 1");
    contract(!history.empty(), "rollout requires a nonempty history");
    HistoryBuffer<T> window = history;  // copy; caller's buffer is untouched

    const auto shape = window.back()->value.shape();
    Value<T> carry_present = constant(Tensor<T>(shape));
    Value<T> carry_history = window.front();  // x_1 as initial membrane

    FuturePrediction<T> out;
    for (int64_t k = 0; k < n; ++k) {
      Value<T> x_t = window.back();
      auto lat = latent_head_.forward(ctx, x_t);
      Rng step_rng = rng.split("latent", static_cast<uint64_t>(k));
      Value<T> eta = sample_latent(lat, step_rng, mode);
      Value<T> eta_map = tile_spatial(eta, shape[2], shape[3]);

      Value<T> u_p = present_bn_.forward(
          ctx, present_conv_.forward(ctx, concat_channels<T>({x_t, eta_map})));
      auto sp = lif_step(lif_, carry_present, u_p, ctx.smooth_spikes);
      carry_present = sp.carry;

      Value<T> next;
      if (cfg_.pathway == PathwayMode::Dual) {
        Value<T> u_h =
            history_bn_.forward(ctx, history_conv_.forward(ctx, window.stacked()));
        auto sh = lif_step(lif_, carry_history, u_h, ctx.smooth_spikes);
        carry_history = sh.carry;
        next = add(sp.spikes, sh.spikes);
        if (ctx.audit) ctx.audit->observe("pred.dual", next->value, 2);
      } else {
        next = sp.spikes;
        if (ctx.audit) ctx.audit->observe("pred.single", next->value, 1);
      }
      out.steps.push_back(next);
      window.push(next);
    }
    return out;
  }

  // Spiking residual stack applied in SA mode over past + predicted features
  // for additional temporal mixing before the decoder.
  std::vector<Value<T>> temporal_mix(Ctx<T>& ctx,
                                     const std::vector<Value<T>>& seq) {
    std::vector<Value<T>> cur = seq;
    for (auto& b : mix_) cur = b.forward(ctx, cur);
    return cur;
  }

  UncertaintyHead<T>& latent_head() { return latent_head_; }

 private:
  PredictionConfig cfg_;
  LifParams lif_;
  UncertaintyHead<T> latent_head_;
  Conv2dLayer<T> present_conv_;
  BatchNorm2dLayer<T> present_bn_;
  Conv2dLayer<T> history_conv_;
  BatchNorm2dLayer<T> history_bn_;
  std::vector<ResidualStage<T>> mix_;
};

}  // namespace spikedrive
