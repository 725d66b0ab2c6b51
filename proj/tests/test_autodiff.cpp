#include "doctest.h"

#include "spikedrive/nn_ops.hpp"

#include "testing_util.hpp"

using namespace spikedrive;
using spikedrive::testing::check_gradients;
using spikedrive::testing::close;

TEST_CASE("tensor basics") {
  TensorD t({2, 3});
  CHECK(t.size() == 6);
  t.at4(0, 0, 0, 0);  // not meaningful for 2-d, but exercise data access
  t[5] = 2.5;
  CHECK(t[5] == 2.5);
  CHECK(t.shape_str() == "[2,3]");
  CHECK_THROWS_AS(TensorD({2}, {1.0, 2.0, 3.0}), ContractError);
}

TEST_CASE("sum of inputs has unit gradient") {
  auto x = parameter(TensorD::full({4}, 1.5));
  auto loss = sum_all(x);
  backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("detached branch receives zero gradient") {
  auto x = parameter(TensorD::full({3}, 2.0));
  auto frozen = stop_gradient(x);
  auto live = scale(x, 3.0);
  auto loss = sum_all(add(live, frozen));
  backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(x->grad[i] == 3.0);
}

TEST_CASE("cycle detection") {
  auto x = parameter(TensorD::full({1}, 1.0));
  auto y = scale(x, 2.0);
  y->parents.push_back(y);  // malform the graph on purpose
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("gradient accumulation over shared subexpressions") {
  auto x = parameter(TensorD::full({1}, 3.0));
  auto y = mul(x, x);  // x^2, dy/dx = 6
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(7);
  auto err = check_gradients(
      {{2, 3}, {2, 3}},
      [](const std::vector<Value<double>>& in, bool) {
        auto a = in[0];
        auto b = in[1];
        auto y = add(mul(a, b), affine(sub(a, b), 0.5, 0.25));
        y = add(y, exp_op(scale(a, 0.3)));
        y = add(y, softplus(b));
        return mean_all(y);
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("clip and abs gradients") {
  Rng rng(9);
  auto err = check_gradients(
      {{8}},
      [](const std::vector<Value<double>>& in, bool) {
        return mean_all(add(clip(in[0], -0.5, 0.5), abs_op(in[0])));
      },
      rng, 1e-6);  // small step keeps probes on one side of the kinks
  CHECK(err < 1e-3);
}

TEST_CASE("dense layer matches finite differences") {
  Rng rng(11);
  auto err = check_gradients(
      {{2, 3}, {4, 3}, {4}},
      [](const std::vector<Value<double>>& in, bool) {
        return mean_all(dense(in[0], in[1], in[2]));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d forward: identity kernel") {
  TensorD x({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x[i] = i;
  TensorD w({1, 1, 3, 3});
  w[4] = 1.0;  // center tap
  auto y = conv2d(constant(x), constant(w), Value<double>{});
  CHECK(y->value.same_shape(x));
  for (int i = 0; i < 9; ++i) CHECK(y->value[i] == doctest::Approx(double(i)));
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(13);
  auto err = check_gradients(
      {{2, 2, 4, 5}, {3, 2, 3, 3}, {3}},
      [](const std::vector<Value<double>>& in, bool) {
        return mean_all(conv2d(in[0], in[1], in[2]));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("strided conv2d matches finite differences") {
  Rng rng(14);
  auto err = check_gradients(
      {{1, 2, 6, 6}, {3, 2, 3, 3}},
      [](const std::vector<Value<double>>& in, bool) {
        return mean_all(conv2d(in[0], in[1], Value<double>{}, 2));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("pooling and upsampling gradients") {
  Rng rng(17);
  auto err = check_gradients(
      {{2, 2, 4, 4}},
      [](const std::vector<Value<double>>& in, bool) {
        auto a = max_pool2x2(in[0]);
        auto b = avg_pool2x2(in[0]);
        auto c = upsample_nearest2(add(a, b));
        return mean_all(c);
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("global average pool and tiling gradients") {
  Rng rng(19);
  auto err = check_gradients(
      {{2, 3, 2, 2}},
      [](const std::vector<Value<double>>& in, bool) {
        auto v = global_avg_pool(in[0]);
        auto t = tile_spatial(v, 2, 2);
        return mean_all(mul(t, in[0]));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("batch norm training mode matches finite differences") {
  Rng rng(23);
  TensorD rm({3}), rv = TensorD::full({3}, 1.0);
  auto err = check_gradients(
      {{2, 3, 2, 2}, {3}, {3}},
      [&](const std::vector<Value<double>>& in, bool) {
        TensorD m = rm, v = rv;  // stats are scratch state here
        auto y = batch_norm2d(in[0], in[1], in[2], m, v, true);
        return mean_all(mul(y, y));
      },
      rng, 1e-5, 0.2, 1.7);
  CHECK(err < 1e-6);
}

TEST_CASE("batch norm eval mode uses running statistics") {
  TensorD rm = TensorD::full({1}, 2.0);
  TensorD rv = TensorD::full({1}, 4.0);
  auto x = constant(TensorD::full({1, 1, 1, 1}, 6.0));
  auto g = constant(TensorD::full({1}, 1.0));
  auto b = constant(TensorD({1}));
  auto y = batch_norm2d(x, g, b, rm, rv, false);
  CHECK(y->value[0] == doctest::Approx((6.0 - 2.0) / std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("softmax channels sums to one and matches finite differences") {
  Rng rng(29);
  auto x = parameter(TensorD({1, 4, 2, 2}));
  for (int64_t i = 0; i < x->value.size(); ++i) x->value[i] = rng.uniform(-2, 2);
  auto y = softmax_channels(x);
  for (int64_t q = 0; q < 4; ++q) {
    double s = 0;
    for (int64_t c = 0; c < 4; ++c) s += y->value[c * 4 + q];
    CHECK(s == doctest::Approx(1.0));
  }
  auto err = check_gradients(
      {{1, 3, 2, 2}, {1, 3, 2, 2}},
      [](const std::vector<Value<double>>& in, bool) {
        return mean_all(mul(softmax_channels(in[0]), in[1]));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("concat/slice/warp gradients") {
  Rng rng(31);
  std::vector<int64_t> warp_map = {3, -1, 0, 2};  // 2x2 grid shuffle
  auto err = check_gradients(
      {{1, 2, 2, 2}, {1, 1, 2, 2}},
      [&](const std::vector<Value<double>>& in, bool) {
        auto cat = concat_channels<double>({in[0], in[1]});
        auto sl = slice_channels(cat, 1, 3);
        auto wp = warp_gather(sl, warp_map);
        return mean_all(mul(wp, wp));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("gather_sum accumulates duplicates") {
  auto x = parameter(TensorD({4}));
  for (int i = 0; i < 4; ++i) x->value[i] = i + 1.0;
  auto y = gather_sum(x, {0, 2, 2});
  CHECK(scalar_value(y) == doctest::Approx(1.0 + 3.0 + 3.0));
  backward(y);
  CHECK(x->grad[0] == 1.0);
  CHECK(x->grad[1] == 0.0);
  CHECK(x->grad[2] == 2.0);
}

TEST_CASE("ce_map values and gradients") {
  // 2 classes, single pixel with logits (0, 0): loss = log 2
  TensorD logits({1, 2, 1, 1});
  Tensor<int32_t> labels({1}, {1});
  auto v = ce_map(constant(logits), labels);
  CHECK(v->value[0] == doctest::Approx(std::log(2.0)));

  Rng rng(37);
  Tensor<int32_t> labs({4}, {0, 1, 1, 0});
  auto err = check_gradients(
      {{1, 2, 2, 2}},
      [&](const std::vector<Value<double>>& in, bool) {
        return mean_all(ce_map(in[0], labs));
      },
      rng);
  CHECK(err < 1e-6);
}

TEST_CASE("topk_mean selects the largest values") {
  TensorD x({4});
  x[0] = 0.5;
  x[1] = 3.0;
  x[2] = 1.0;
  x[3] = 2.0;
  auto v = topk_mean(constant(x), 0.5);
  CHECK(scalar_value(v) == doctest::Approx(2.5));
  auto p = parameter(x);
  auto v2 = topk_mean(p, 0.5);
  backward(v2);
  CHECK(p->grad[1] == doctest::Approx(0.5));
  CHECK(p->grad[3] == doctest::Approx(0.5));
  CHECK(p->grad[0] == 0.0);
  // k_frac = 1 is the plain mean
  auto v3 = topk_mean(constant(x), 1.0);
  CHECK(scalar_value(v3) == doctest::Approx((0.5 + 3.0 + 1.0 + 2.0) / 4.0));
}

TEST_CASE("l1/mse losses") {
  TensorD target({2});
  target[0] = 1.0;
  target[1] = -1.0;
  auto p = parameter(TensorD({2}));
  p->value[0] = 2.0;
  p->value[1] = 1.0;
  auto l1 = l1_loss(p, target);
  CHECK(scalar_value(l1) == doctest::Approx(1.5));
  auto l2 = mse_loss(p, target);
  CHECK(scalar_value(l2) == doctest::Approx((1.0 + 4.0) / 2.0));
  Rng rng(41);
  auto err = check_gradients(
      {{5}},
      [&](const std::vector<Value<double>>& in, bool) {
        TensorD t({5});
        for (int i = 0; i < 5; ++i) t[i] = 0.1 * i;
        return add(mse_loss(in[0], t), scale(l1_loss(in[0], t), 0.5));
      },
      rng, 1e-6);
  CHECK(err < 1e-3);
}
