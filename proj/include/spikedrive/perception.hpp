#pragma once

#include "spikedrive/geometry.hpp"
#include "spikedrive/layers.hpp"

namespace spikedrive {

// ---------------------------------------------------------------------------
// timestep strategies
// ---------------------------------------------------------------------------

// SR repeats one frame over T model steps (frames ride the batch dimension);
// SA feeds one frame per model step; NoT runs a single stateless step.
struct TimestepStrategy {
  enum class Kind { SR, SA, NoT };
  Kind kind = Kind::SR;
  int64_t repeats = 1;  // SR only

  static TimestepStrategy sr(int64_t t) { return {Kind::SR, t}; }
  static TimestepStrategy sa() { return {Kind::SA, 1}; }
  static TimestepStrategy no_t() { return {Kind::NoT, 1}; }

  void validate() const {
    if (kind == Kind::SR)
      contract(repeats >= 1, "SR strategy requires T >= 1");
  }
  std::string str() const {
    switch (kind) {
      case Kind::SR: return "SR";
      case Kind::SA: return "SA";
      default: return "NoT";
    }
  }
  static TimestepStrategy parse(const std::string& s, int64_t t) {
    if (s == "SR") return sr(t);
    if (s == "SA") return sa();
    if (s == "NoT") return no_t();
    throw ContractError("unknown timestep strategy: " + s);
  }
};

// Model-time arrangement of a frame sequence. `steps[t]` carries the batch for
// model step t; `frames_per_step` tells how many frames were stacked into the
// batch dimension (SR/NoT) versus presented sequentially (SA).
template <typename T>
struct ArrangedFrames {
  std::vector<Value<T>> steps;
  int64_t frames_per_step = 1;  // L when stacked, 1 under SA
  bool time_is_frames = false;  // SA: model step == frame index
};

template <typename T>
ArrangedFrames<T> arrange_timesteps(const std::vector<Value<T>>& frames,
                                    const TimestepStrategy& strategy) {
  contract(!frames.empty(), "arrange_timesteps: no frames");
  strategy.validate();
  ArrangedFrames<T> out;
  switch (strategy.kind) {
    case TimestepStrategy::Kind::SR: {
      Value<T> stacked =
          frames.size() == 1 ? frames[0] : stack_batch(frames);
      out.steps.assign(static_cast<size_t>(strategy.repeats), stacked);
      out.frames_per_step = static_cast<int64_t>(frames.size());
      break;
    }
    case TimestepStrategy::Kind::SA: {
      out.steps = frames;
      out.frames_per_step = 1;
      out.time_is_frames = true;
      break;
    }
    case TimestepStrategy::Kind::NoT: {
      out.steps.push_back(frames.size() == 1 ? frames[0] : stack_batch(frames));
      out.frames_per_step = static_cast<int64_t>(frames.size());
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

// Per-camera feature map and categorical depth estimate, stacked over the
// (frame, camera) batch: F [L*N, Cf, H', W'], D [L*N, Cd, H', W'] with D
// softmax-normalised per pixel.
template <typename T>
struct FeatDepth {
  Value<T> features;
  Value<T> depth;
  int64_t cams = 0;
  int64_t frames = 0;
};

struct DepthBins {
  int64_t count = 8;
  double min_depth = 1.0;
  double max_depth = 17.0;

  double center(int64_t k) const {
    const double step = (max_depth - min_depth) / static_cast<double>(count);
    return min_depth + (k + 0.5) * step;
  }
};

struct EncoderConfig {
  std::vector<int64_t> channels = {16, 32, 64, 96, 128, 128, 128, 96, 64, 48, 32, 32};
  std::vector<int64_t> pool_after = {3, 6, 9};  // 1-based layer indices
  int64_t feat_channels = 32;
  DepthBins depth_bins;

  int64_t downsample() const { return int64_t(1) << pool_after.size(); }
};

// 12-layer spiking token-mixer: conv/BN/LIF blocks on an inverted-bottleneck
// channel schedule with 2x2 max-pools after layers 3, 6 and 9. Spike outputs
// are rate-averaged over model time before the feature and depth heads.
template <typename T>
class StmEncoder {
 public:
  StmEncoder() = default;
  StmEncoder(ParamRegistry<T>& reg, const Rng& rng, const EncoderConfig& cfg,
             const LifParams& lif, int64_t in_channels = 3)
      : cfg_(cfg) {
    int64_t cin = in_channels;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      layers_.emplace_back(reg, rng, "encoder.l" + std::to_string(i), cin,
                           cfg.channels[i], lif);
      cin = cfg.channels[i];
    }
    feat_head_ = Conv2dLayer<T>(reg, rng, "encoder.feat_head", cin,
                                cfg.feat_channels, 3, true);
    depth_head_ = Conv2dLayer<T>(reg, rng, "encoder.depth_head", cin,
                                 cfg.depth_bins.count, 3, true);
  }

  // frames: per-frame [N, C_in, H, W] image batches, pixel values in [0, 1].
  FeatDepth<T> forward(Ctx<T>& ctx, const std::vector<Value<T>>& frames,
                       const TimestepStrategy& strategy) {
    contract(!frames.empty(), "encoder: no frames");
    const auto& s = frames[0]->value.shape();
    const int64_t ds = cfg_.downsample();
    contract(s[2] % ds == 0 && s[3] % ds == 0 && s[2] >= ds && s[3] >= ds,
             "encoder: input smaller than the receptive field after pooling");
    auto arranged = arrange_timesteps(frames, strategy);
    std::vector<Value<T>> spikes = run_blocks(ctx, arranged.steps);

    std::vector<Value<T>> rates;  // one per frame-stacked batch
    if (arranged.time_is_frames) {
      // SA: one frame per step, hidden state carried across frames
      rates = spikes;
    } else {
      // SR/NoT: average spike rates over model time
      rates.push_back(mean_of(spikes));
    }

    // heads run on rates; under SA each frame contributes one rate map
    std::vector<Value<T>> f_parts, d_parts;
    for (auto& r : rates) {
      f_parts.push_back(feat_head_.forward(ctx, r));
      d_parts.push_back(softmax_channels(depth_head_.forward(ctx, r)));
    }
    FeatDepth<T> out;
    out.features = f_parts.size() == 1 ? f_parts[0] : stack_batch(f_parts);
    out.depth = d_parts.size() == 1 ? d_parts[0] : stack_batch(d_parts);
    out.frames = static_cast<int64_t>(frames.size());
    out.cams = frames[0]->value.dim(0);
    return out;
  }

 private:
  // Runs the 12 blocks over the model-time steps; returns per-step final
  // spike maps.
  std::vector<Value<T>> run_blocks(Ctx<T>& ctx, const std::vector<Value<T>>& steps) {
    std::vector<Value<T>> cur = steps;
    for (size_t i = 0; i < layers_.size(); ++i) {
      auto sp = layers_[i].forward(ctx, cur, /*first_layer=*/i == 0);
      cur = sp.steps;
      for (int64_t p : cfg_.pool_after)
        if (static_cast<int64_t>(i) + 1 == p)
          for (auto& c : cur) c = max_pool2x2(c);
    }
    return cur;
  }

  EncoderConfig cfg_;
  std::vector<SpikingConv2d<T>> layers_;
  Conv2dLayer<T> feat_head_, depth_head_;
};

// ---------------------------------------------------------------------------
// lift & splat
// ---------------------------------------------------------------------------

// Precomputed (camera, depth bin, pixel) -> BEV cell mapping. The rig is
// ego-mounted, so one map serves every frame.
struct SplatGeometry {
  std::vector<int32_t> cell;  // [N, Cd, H', W'] flat; -1 = outside the grid
  int64_t cams = 0, bins = 0, fh = 0, fw = 0;

  static SplatGeometry build(const std::vector<CameraRig>& rigs,
                             const DepthBins& bins, const BevSpec& bev,
                             int64_t fh, int64_t fw, int64_t downsample) {
    contract(!rigs.empty(), "splat: no camera rigs");
    for (const auto& r : rigs) r.intrinsics.validate();
    SplatGeometry g;
    g.cams = static_cast<int64_t>(rigs.size());
    g.bins = bins.count;
    g.fh = fh;
    g.fw = fw;
    g.cell.assign(static_cast<size_t>(g.cams * g.bins * fh * fw), -1);
    for (int64_t n = 0; n < g.cams; ++n)
      for (int64_t k = 0; k < bins.count; ++k)
        for (int64_t h = 0; h < fh; ++h)
          for (int64_t w = 0; w < fw; ++w) {
            const double u = (w + 0.5) * static_cast<double>(downsample);
            const double v = (h + 0.5) * static_cast<double>(downsample);
            const Vec3 p = rigs[n].unproject(u, v, bins.center(k));
            int64_t i, j;
            if (bev.cell_of(p.x, p.y, i, j))
              g.cell[((n * g.bins + k) * fh + h) * fw + w] =
                  static_cast<int32_t>(i * bev.cells + j);
          }
    return g;
  }
};

// Outer product of features and depth distributions splatted into the BEV
// grid by sum pooling: out[l, c, cell] += F[l,n,c,h,w] * D[l,n,k,h,w].
// Points that leave the grid extent are dropped.
template <typename T>
Value<T> lift_splat(const FeatDepth<T>& fd, const SplatGeometry& geom,
                    const BevSpec& bev) {
  const auto& fs = fd.features->value.shape();
  const auto& dsh = fd.depth->value.shape();
  const int64_t L = fd.frames, N = fd.cams;
  contract(fs[0] == L * N && dsh[0] == L * N, "splat: batch mismatch");
  contract(fs[2] == geom.fh && fs[3] == geom.fw, "splat: feature size mismatch");
  contract(dsh[1] == geom.bins, "splat: depth bin mismatch");
  const int64_t Cf = fs[1], Cd = geom.bins, fh = geom.fh, fw = geom.fw;
  const int64_t G = bev.cells, px = fh * fw;

  Tensor<T> out({L, Cf, G, G});
  const T* F = fd.features->value.data();
  const T* D = fd.depth->value.data();
  T* O = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t l = 0; l < L; ++l) {
    T* grid = O + l * Cf * G * G;
    for (int64_t n = 0; n < N; ++n) {
      const int64_t b = l * N + n;
      for (int64_t k = 0; k < Cd; ++k) {
        const T* drow = D + (b * Cd + k) * px;
        const int32_t* crow = geom.cell.data() + (n * Cd + k) * px;
        for (int64_t p = 0; p < px; ++p) {
          const int32_t cell = crow[p];
          if (cell < 0) continue;
          const T d = drow[p];
          if (d == T(0)) continue;
          for (int64_t c = 0; c < Cf; ++c)
            grid[c * G * G + cell] += F[(b * Cf + c) * px + p] * d;
        }
      }
    }
  }

  auto gptr = std::make_shared<SplatGeometry>(geom);
  return make_node<T>(
      std::move(out), {fd.features, fd.depth}, [gptr, L, N, Cf, G](Node<T>& self) {
        Node<T>& fn = *self.parents[0];
        Node<T>& dn = *self.parents[1];
        const int64_t Cd = gptr->bins, px = gptr->fh * gptr->fw;
        const T* F = fn.value.data();
        const T* D = dn.value.data();
        const T* GO = self.grad.data();
        T* gF = fn.requires_grad ? fn.grad_buf().data() : nullptr;
        T* gD = dn.requires_grad ? dn.grad_buf().data() : nullptr;
#pragma omp parallel for schedule(static)
        for (int64_t b = 0; b < L * N; ++b) {
          const int64_t l = b / N, n = b % N;
          const T* ggrid = GO + l * Cf * G * G;
          for (int64_t k = 0; k < Cd; ++k) {
            const int32_t* crow = gptr->cell.data() + (n * Cd + k) * px;
            for (int64_t p = 0; p < px; ++p) {
              const int32_t cell = crow[p];
              if (cell < 0) continue;
              const T d = D[(b * Cd + k) * px + p];
              T dacc = 0;
              for (int64_t c = 0; c < Cf; ++c) {
                const T g = ggrid[c * G * G + cell];
                if (gF) gF[(b * Cf + c) * px + p] += g * d;
                dacc += g * F[(b * Cf + c) * px + p];
              }
              if (gD) gD[(b * Cd + k) * px + p] += dacc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// temporal fusion
// ---------------------------------------------------------------------------

// Discounted BEV history fusion:
//   x~_t = b_t + sum_{i=1..t-1} alpha^i * x~_{t-i},   x~_1 = b_1
// realised through the streaming accumulator
//   A_1 = 0,  x~_t = b_t + A_t,  A_{t+1} = alpha * (x~_t + A_t),
// which telescopes to the same double sum. Prior state is re-sampled into the
// next ego frame by `warps[t]` (nearest neighbor), when provided.
template <typename T>
std::vector<Value<T>> fuse_bev_history(
    const std::vector<Value<T>>& b, double alpha,
    const std::vector<std::vector<int64_t>>* warps = nullptr) {
  contract(!b.empty(), "fusion: empty sequence");
  contract(alpha >= 0.0 && alpha < 1.0, "fusion: alpha must be in [0,1)");
  for (const auto& g : b)
    contract(g->value.same_shape(b[0]->value), "fusion: mismatched grid specs");
  if (warps)
    contract(warps->size() + 1 >= b.size(), "fusion: missing warp maps");
  std::vector<Value<T>> fused;
  fused.reserve(b.size());
  Value<T> acc = constant(Tensor<T>(b[0]->value.shape()));
  for (size_t t = 0; t < b.size(); ++t) {
    Value<T> x = add(b[t], acc);
    fused.push_back(x);
    if (t + 1 < b.size()) {
      Value<T> next = scale(add(x, acc), static_cast<T>(alpha));
      acc = warps ? warp_gather(next, (*warps)[t]) : next;
    }
  }
  return fused;
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

// Per-task logit rasters over the BEV grid. The instance head carries
// centerness (1), offset (2) and flow (2) channels.
template <typename T>
struct BevOutputs {
  Value<T> seg;   // [1, 2, G, G]
  Value<T> ped;   // [1, 2, G, G]
  Value<T> map;   // [1, 4, G, G] drivable (2) + lane (2)
  Value<T> inst;  // [1, 5, G, G]
};

struct DecoderConfig {
  int64_t in_channels = 32;
  std::vector<int64_t> stage_channels = {32, 48, 64};
  int64_t head_channels = 64;
  ResidualMode residual_mode = ResidualMode::MS;
};

// Shared spiking backbone (three residual stages with 2x2 pooling) followed by
// three 2x upsampling stages with skip connections onto 64-channel features,
// then one conv head per task. Head logits are pre-threshold potentials
// averaged over the model steps of each frame.
template <typename T>
class BevDecoder {
 public:
  BevDecoder() = default;
  BevDecoder(ParamRegistry<T>& reg, const Rng& rng, const DecoderConfig& cfg,
             const LifParams& lif)
      : cfg_(cfg) {
    const auto& sc = cfg.stage_channels;
    contract(sc.size() == 3, "decoder expects three backbone stages");
    s1_ = ResidualStage<T>(reg, rng, "decoder.s1", cfg.in_channels, sc[0], lif,
                           cfg.residual_mode);
    s2_ = ResidualStage<T>(reg, rng, "decoder.s2", sc[0], sc[1], lif,
                           cfg.residual_mode);
    s3_ = ResidualStage<T>(reg, rng, "decoder.s3", sc[1], sc[2], lif,
                           cfg.residual_mode);
    u1_ = SpikingConv2d<T>(reg, rng, "decoder.u1", sc[2] + sc[2], sc[1], lif);
    u2_ = SpikingConv2d<T>(reg, rng, "decoder.u2", sc[1] + sc[1], sc[0], lif);
    u3_ = SpikingConv2d<T>(reg, rng, "decoder.u3", sc[0] + sc[0],
                           cfg.head_channels, lif);
    head_seg_ = Conv2dLayer<T>(reg, rng, "decoder.head_seg", cfg.head_channels, 2, 3, true);
    head_ped_ = Conv2dLayer<T>(reg, rng, "decoder.head_ped", cfg.head_channels, 2, 3, true);
    head_map_ = Conv2dLayer<T>(reg, rng, "decoder.head_map", cfg.head_channels, 4, 3, true);
    head_inst_ = Conv2dLayer<T>(reg, rng, "decoder.head_inst", cfg.head_channels, 5, 3, true);
  }

  // One BevOutputs per input frame. SA holds LIF state across frames; SR/NoT
  // stack frames along the batch (independent items) with state only across
  // the repeated model steps.
  std::vector<BevOutputs<T>> forward(Ctx<T>& ctx,
                                     const std::vector<Value<T>>& frames,
                                     const TimestepStrategy& strategy) {
    contract(!frames.empty(), "decoder: empty sequence");
    const auto& s = frames[0]->value.shape();
    contract(s[2] % 8 == 0 && s[3] % 8 == 0,
             "decoder: grid must be divisible by 8");
    auto arranged = arrange_timesteps(frames, strategy);

    // layer-by-layer over the model-time sequence; carries live inside each
    // layer's forward call
    auto pool_all = [](std::vector<Value<T>> xs) {
      for (auto& x : xs) x = max_pool2x2(x);
      return xs;
    };
    auto r1 = s1_.forward(ctx, arranged.steps);
    auto p1 = pool_all(r1);
    auto r2 = s2_.forward(ctx, p1);
    auto p2 = pool_all(r2);
    auto r3 = s3_.forward(ctx, p2);
    auto p3 = pool_all(r3);

    const size_t S = arranged.steps.size();
    std::vector<Value<T>> in1(S), in2(S), in3(S);
    for (size_t t = 0; t < S; ++t)
      in1[t] = concat_channels<T>({upsample_nearest2(p3[t]), r3[t]});
    auto up1 = u1_.forward(ctx, in1).steps;
    for (size_t t = 0; t < S; ++t)
      in2[t] = concat_channels<T>({upsample_nearest2(up1[t]), r2[t]});
    auto up2 = u2_.forward(ctx, in2).steps;
    for (size_t t = 0; t < S; ++t)
      in3[t] = concat_channels<T>({upsample_nearest2(up2[t]), r1[t]});
    auto feats = u3_.forward(ctx, in3).steps;

    std::vector<Value<T>> heads[4];
    for (const auto& f : feats) {
      heads[0].push_back(head_seg_.forward(ctx, f));
      heads[1].push_back(head_ped_.forward(ctx, f));
      heads[2].push_back(head_map_.forward(ctx, f));
      heads[3].push_back(head_inst_.forward(ctx, f));
    }

    std::vector<BevOutputs<T>> out;
    const int64_t L = static_cast<int64_t>(frames.size());
    if (arranged.time_is_frames) {
      for (int64_t l = 0; l < L; ++l)
        out.push_back({heads[0][l], heads[1][l], heads[2][l], heads[3][l]});
    } else {
      Value<T> avg[4];
      for (int k = 0; k < 4; ++k) avg[k] = mean_of(heads[k]);
      for (int64_t l = 0; l < L; ++l)
        out.push_back({slice_batch(avg[0], l, l + 1), slice_batch(avg[1], l, l + 1),
                       slice_batch(avg[2], l, l + 1), slice_batch(avg[3], l, l + 1)});
    }
    return out;
  }

  int64_t head_channels() const { return cfg_.head_channels; }

 private:
  DecoderConfig cfg_;
  ResidualStage<T> s1_, s2_, s3_;
  SpikingConv2d<T> u1_, u2_, u3_;
  Conv2dLayer<T> head_seg_, head_ped_, head_map_, head_inst_;
};

}  // namespace spikedrive
