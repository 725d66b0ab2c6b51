#include "doctest.h"

#include "spikedrive/perception.hpp"
#include "spikedrive/scenario.hpp"

#include "testing_util.hpp"

using namespace spikedrive;

namespace {

std::vector<Value<double>> random_frames(Rng& rng, int64_t l, int64_t n,
                                         int64_t h, int64_t w) {
  std::vector<Value<double>> out;
  for (int64_t f = 0; f < l; ++f) {
    TensorD t({n, 3, h, w});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0, 1);
    out.push_back(constant(t));
  }
  return out;
}

}  // namespace

TEST_CASE("arrange_timesteps shape contracts") {
  Rng rng(2);
  auto frames = random_frames(rng, 3, 2, 8, 8);

  auto sr = arrange_timesteps(frames, TimestepStrategy::sr(4));
  CHECK(sr.steps.size() == 4);                 // model time = T
  CHECK(sr.steps[0]->value.dim(0) == 6);       // batch carries the frames
  CHECK(sr.frames_per_step == 3);

  auto sa = arrange_timesteps(frames, TimestepStrategy::sa());
  CHECK(sa.steps.size() == 3);                 // model time = L
  CHECK(sa.steps[0]->value.dim(0) == 2);

  auto nt = arrange_timesteps(frames, TimestepStrategy::no_t());
  CHECK(nt.steps.size() == 1);                 // single stateless step
  CHECK(nt.steps[0]->value.dim(0) == 6);

  CHECK_THROWS_AS(arrange_timesteps(frames, TimestepStrategy::sr(0)),
                  ContractError);
}

TEST_CASE("encoder: shapes, silence on zero input, rates in [0,1]") {
  Rng rng(3);
  ParamRegistry<double> reg;
  EncoderConfig cfg;
  cfg.channels = {4, 6, 8};     // desk-size stand-in, one pool
  cfg.pool_after = {2};
  cfg.feat_channels = 5;
  cfg.depth_bins.count = 4;
  StmEncoder<double> enc(reg, rng, cfg, LifParams{});
  Ctx<double> ctx;
  ctx.training = true;

  auto frames = random_frames(rng, 2, 2, 8, 12);
  auto fd = enc.forward(ctx, frames, TimestepStrategy::sr(3));
  CHECK(fd.features->value.shape() == std::vector<int64_t>{4, 5, 4, 6});
  CHECK(fd.depth->value.shape() == std::vector<int64_t>{4, 4, 4, 6});
  // depth is a distribution per pixel
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t q = 0; q < 24; ++q) {
      double s = 0;
      for (int64_t k = 0; k < 4; ++k) s += fd.depth->value[(b * 4 + k) * 24 + q];
      CHECK(s == doctest::Approx(1.0));
    }

  // zero input with zero-initialized biases: zero features
  std::vector<Value<double>> zeros(2, constant(TensorD({2, 3, 8, 12})));
  auto fz = enc.forward(ctx, zeros, TimestepStrategy::sr(2));
  for (int64_t i = 0; i < fz.features->value.size(); ++i)
    CHECK(fz.features->value[i] == 0.0);

  CHECK_THROWS_AS(enc.forward(ctx, random_frames(rng, 1, 1, 8, 9),
                              TimestepStrategy::sr(1)),
                  ContractError);  // width not divisible by the downsample
}

TEST_CASE("lift & splat: one-hot depth lands at the unprojected cell") {
  // single camera, single feature pixel, depth one-hot at bin k
  CameraRig rig;
  rig.intrinsics = {20.0, 20.0, 2.0, 2.0};
  rig.position = {0, 0, 1.5};
  rig.yaw = 0;
  DepthBins bins;
  bins.count = 4;
  bins.min_depth = 1.0;
  bins.max_depth = 9.0;
  BevSpec bev{24, 1.0};

  const int64_t fh = 4, fw = 4, ds = 2;
  auto geom = SplatGeometry::build({rig}, bins, bev, fh, fw, ds);

  FeatDepth<double> fd;
  fd.cams = 1;
  fd.frames = 1;
  TensorD F({1, 1, fh, fw}), D({1, 4, fh, fw});
  const int64_t px = 1 * fw + 2, bin = 2;
  F[px] = 3.0;
  D[bin * fh * fw + px] = 1.0;
  fd.features = constant(F);
  fd.depth = constant(D);
  auto out = lift_splat(fd, geom, bev);

  // hand-unproject the same ray
  const Vec3 p = rig.unproject((2 + 0.5) * ds, (1 + 0.5) * ds, bins.center(bin));
  int64_t ci, cj;
  REQUIRE(bev.cell_of(p.x, p.y, ci, cj));
  for (int64_t i = 0; i < bev.cells; ++i)
    for (int64_t j = 0; j < bev.cells; ++j) {
      const double v = out->value[i * bev.cells + j];
      if (i == ci && j == cj)
        CHECK(v == doctest::Approx(3.0));
      else
        CHECK(v == 0.0);
    }
}

TEST_CASE("splat conserves mass and is permutation-invariant over cameras") {
  Rng rng(5);
  auto rigs = default_rig(3, 16, 24);
  DepthBins bins;
  // generous grid so no point leaves the extent
  BevSpec bev{96, 0.5};
  const int64_t fh = 2, fw = 3, ds = 8;
  auto geom = SplatGeometry::build(rigs, bins, bev, fh, fw, ds);
  // every (cam, bin, pixel) must land inside this grid for mass conservation
  for (int32_t c : geom.cell) REQUIRE(c >= 0);

  FeatDepth<double> fd;
  fd.cams = 3;
  fd.frames = 1;
  TensorD F({3, 2, fh, fw}), D({3, static_cast<int64_t>(bins.count), fh, fw});
  for (int64_t i = 0; i < F.size(); ++i) F[i] = rng.uniform(0, 1);
  for (int64_t i = 0; i < D.size(); ++i) D[i] = rng.uniform(0, 1);
  fd.features = constant(F);
  fd.depth = constant(D);
  auto out = lift_splat(fd, geom, bev);

  double mass_out = 0;
  for (int64_t i = 0; i < out->value.size(); ++i) mass_out += out->value[i];
  double mass_in = 0;
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t k = 0; k < bins.count; ++k)
        for (int64_t q = 0; q < fh * fw; ++q)
          mass_in += F[(n * 2 + c) * fh * fw + q] *
                     D[(n * bins.count + k) * fh * fw + q];
  CHECK(mass_out == doctest::Approx(mass_in).epsilon(1e-9));

  // swapping two cameras (with their geometry) leaves the grid unchanged
  auto rigs2 = rigs;
  std::swap(rigs2[0], rigs2[1]);
  auto geom2 = SplatGeometry::build(rigs2, bins, bev, fh, fw, ds);
  TensorD F2 = F, D2 = D;
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t q = 0; q < fh * fw; ++q) {
      std::swap(F2[(0 * 2 + c) * fh * fw + q], F2[(1 * 2 + c) * fh * fw + q]);
    }
  for (int64_t k = 0; k < bins.count; ++k)
    for (int64_t q = 0; q < fh * fw; ++q)
      std::swap(D2[(0 * bins.count + k) * fh * fw + q],
                D2[(1 * bins.count + k) * fh * fw + q]);
  FeatDepth<double> fd2;
  fd2.cams = 3;
  fd2.frames = 1;
  fd2.features = constant(F2);
  fd2.depth = constant(D2);
  auto out2 = lift_splat(fd2, geom2, bev);
  for (int64_t i = 0; i < out->value.size(); ++i)
    CHECK(out->value[i] == doctest::Approx(out2->value[i]).epsilon(1e-12));
}

TEST_CASE("splat gradients match finite differences") {
  Rng rng(7);
  CameraRig rig;
  rig.intrinsics = {10.0, 10.0, 3.0, 2.0};
  rig.position = {0, 0, 1.5};
  DepthBins bins;
  bins.count = 3;
  bins.max_depth = 7.0;
  BevSpec bev{12, 1.0};
  auto geom = SplatGeometry::build({rig}, bins, bev, 2, 3, 2);
  auto err = spikedrive::testing::check_gradients(
      {{1, 2, 2, 3}, {1, 3, 2, 3}},
      [&](const std::vector<Value<double>>& in, bool) {
        FeatDepth<double> fd;
        fd.cams = 1;
        fd.frames = 1;
        fd.features = in[0];
        fd.depth = in[1];
        auto g = lift_splat(fd, geom, bev);
        return mean_all(mul(g, g));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("fusion follows the printed recursion") {
  // scalar b_t = 1, alpha = 0.5: 1, 1.5, 2.0, 2.5, 3.0
  std::vector<Value<double>> b(5, constant(TensorD::full({1, 1, 1, 1}, 1.0)));
  auto fused = fuse_bev_history(b, 0.5);
  const double expect[] = {1.0, 1.5, 2.0, 2.5, 3.0};
  for (int t = 0; t < 5; ++t)
    CHECK(fused[static_cast<size_t>(t)]->value[0] == doctest::Approx(expect[t]).epsilon(1e-12));
  // initial condition
  CHECK(fused[0]->value[0] == 1.0);
}

TEST_CASE("streaming fusion equals the literal double sum") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const int T = 32;
    std::vector<TensorD> b;
    std::vector<Value<double>> bv;
    for (int t = 0; t < T; ++t) {
      TensorD g({1, 1, 2, 2});
      for (int64_t i = 0; i < 4; ++i) g[i] = rng.uniform(-1, 1);
      b.push_back(g);
      bv.push_back(constant(g));
    }
    auto fused = fuse_bev_history(bv, 0.5);

    // literal evaluation: x~_t = b_t + sum_{i=1}^{t-1} alpha^i x~_{t-i}
    std::vector<TensorD> direct;
    for (int t = 0; t < T; ++t) {
      TensorD x = b[static_cast<size_t>(t)];
      double a = 1.0;
      for (int i = 1; i <= t; ++i) {
        a *= 0.5;
        for (int64_t q = 0; q < 4; ++q)
          x[q] += a * direct[static_cast<size_t>(t - i)][q];
      }
      direct.push_back(x);
    }
    for (int t = 0; t < T; ++t)
      for (int64_t q = 0; q < 4; ++q)
        CHECK(std::abs(fused[static_cast<size_t>(t)]->value[q] -
                       direct[static_cast<size_t>(t)][q]) < 1e-12);
  }
}

TEST_CASE("fusion rejects mismatched grids and bad alpha") {
  std::vector<Value<double>> b{constant(TensorD({1, 1, 2, 2})),
                               constant(TensorD({1, 1, 3, 3}))};
  CHECK_THROWS_AS(fuse_bev_history(b, 0.5), ContractError);
  std::vector<Value<double>> ok{constant(TensorD({1, 1, 2, 2}))};
  CHECK_THROWS_AS(fuse_bev_history(ok, 1.0), ContractError);
}

TEST_CASE("decoder shape contracts and strategy semantics") {
  Rng rng(13);
  ParamRegistry<double> reg;
  DecoderConfig cfg;
  cfg.in_channels = 4;
  cfg.stage_channels = {4, 6, 8};
  cfg.head_channels = 8;
  BevDecoder<double> dec(reg, rng, cfg, LifParams{});
  Ctx<double> ctx;
  ctx.training = true;

  auto mk_frame = [&](uint64_t seed) {
    TensorD t({1, 4, 16, 16});
    Rng r(seed);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.uniform(0, 1);
    return constant(t);
  };

  auto outs = dec.forward(ctx, {mk_frame(31), mk_frame(31)}, TimestepStrategy::sa());
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].seg->value.shape() == std::vector<int64_t>{1, 2, 16, 16});
  CHECK(outs[0].ped->value.shape() == std::vector<int64_t>{1, 2, 16, 16});
  CHECK(outs[0].map->value.shape() == std::vector<int64_t>{1, 4, 16, 16});
  CHECK(outs[0].inst->value.shape() == std::vector<int64_t>{1, 5, 16, 16});

  // NoT: identical frames give identical outputs (no hidden state)
  auto not_outs =
      dec.forward(ctx, {mk_frame(31), mk_frame(31)}, TimestepStrategy::no_t());
  for (int64_t i = 0; i < not_outs[0].seg->value.size(); ++i)
    CHECK(not_outs[0].seg->value[i] == not_outs[1].seg->value[i]);

  // SA: a different first frame changes the second frame's output
  auto sa_a = dec.forward(ctx, {mk_frame(31), mk_frame(31)}, TimestepStrategy::sa());
  auto sa_b = dec.forward(ctx, {mk_frame(77), mk_frame(31)}, TimestepStrategy::sa());
  bool differ = false;
  for (int64_t i = 0; i < sa_a[1].seg->value.size(); ++i)
    if (sa_a[1].seg->value[i] != sa_b[1].seg->value[i]) differ = true;
  CHECK(differ);

  CHECK_THROWS_AS(dec.forward(ctx, {}, TimestepStrategy::sa()), ContractError);
}
