#include "doctest.h"

#include "spikedrive/lif.hpp"

#include "testing_util.hpp"

using namespace spikedrive;
using spikedrive::testing::check_gradients;
using spikedrive::testing::scalar_lif_reference;

namespace {

Value<double> pot(std::initializer_list<double> v) {
  TensorD t({static_cast<int64_t>(v.size())});
  int64_t i = 0;
  for (double x : v) t[i++] = x;
  return constant(t);
}

}  // namespace

TEST_CASE("zero input never fires") {
  LifParams p;  // beta 0.5, u_th 1, u_reset 0
  auto step = lif_step(p, pot({0.0}), pot({0.0}));
  CHECK(step.spikes->value[0] == 0.0);
  CHECK(step.carry->value[0] == 0.0);
}

TEST_CASE("hand-stepped recurrence with constant drive 0.6") {
  LifParams p;
  Value<double> carry = pot({0.0});
  std::vector<double> spikes, carries;
  for (int t = 0; t < 3; ++t) {
    auto s = lif_step(p, carry, pot({0.6}));
    spikes.push_back(s.spikes->value[0]);
    carries.push_back(s.carry->value[0]);
    carry = s.carry;
  }
  CHECK(spikes == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(carries[0] == doctest::Approx(0.3));
  CHECK(carries[1] == doctest::Approx(0.45));
  CHECK(carries[2] == 0.0);
}

TEST_CASE("threshold is inclusive: X = u_th fires") {
  LifParams p;
  auto step = lif_step(p, pot({0.0}), pot({p.u_th}));
  CHECK(step.spikes->value[0] == 1.0);
  CHECK(step.carry->value[0] == p.u_reset);
}

TEST_CASE("shape mismatch is a contract violation") {
  LifParams p;
  CHECK_THROWS_AS(lif_step(p, pot({0.0, 0.0}), pot({0.0})), ContractError);
}

TEST_CASE("lif_sequence base cases") {
  LifParams p;
  CHECK_THROWS_AS(lif_sequence(p, std::vector<Value<double>>{}), ContractError);

  // T = 1 reduces to lif_step
  auto seq = lif_sequence(p, std::vector<Value<double>>{pot({1.2, 0.3})});
  auto step = lif_step(p, pot({0.0, 0.0}), pot({1.2, 0.3}));
  CHECK(seq.time_len() == 1);
  for (int i = 0; i < 2; ++i)
    CHECK(seq.steps[0]->value[i] == step.spikes->value[i]);

  // all-zero inputs stay silent
  std::vector<Value<double>> zeros(4, pot({0.0, 0.0, 0.0}));
  auto silent = lif_sequence(p, zeros);
  for (const auto& s : silent.steps)
    for (int64_t i = 0; i < s->value.size(); ++i) CHECK(s->value[i] == 0.0);
}

TEST_CASE("constant drive firing pattern matches the scalar reference") {
  LifParams p;
  std::vector<Value<double>> inputs(6, pot({0.6}));
  auto seq = lif_sequence(p, inputs);
  std::vector<double> ref_s, ref_c;
  scalar_lif_reference(p.beta, p.u_th, p.u_reset, std::vector<double>(6, 0.6),
                       ref_s, ref_c);
  for (int t = 0; t < 6; ++t) CHECK(seq.steps[t]->value[0] == ref_s[t]);
}

TEST_CASE("oracle equivalence over random parameter draws") {
  Rng rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    LifParams p;
    p.beta = rng.uniform(0.0, 0.99);
    p.u_reset = rng.uniform(-0.5, 0.5);
    p.u_th = p.u_reset + rng.uniform(0.05, 1.5);
    const int T = static_cast<int>(rng.uniform_int(1, 16));
    std::vector<double> xs(T);
    for (auto& x : xs) x = rng.uniform(-1.5, 2.0);
    std::vector<Value<double>> inputs;
    for (double x : xs) inputs.push_back(pot({x}));
    auto seq = lif_sequence(p, inputs);
    std::vector<double> ref_s, ref_c;
    scalar_lif_reference(p.beta, p.u_th, p.u_reset, xs, ref_s, ref_c);
    for (int t = 0; t < T; ++t) REQUIRE(seq.steps[t]->value[0] == ref_s[t]);
  }
}

TEST_CASE("reset and decay correctness") {
  Rng rng(321);
  LifParams p;
  p.beta = 0.7;
  for (int trial = 0; trial < 200; ++trial) {
    const double x = rng.uniform(-1.0, 2.5);
    const double c0 = rng.uniform(-0.5, 1.0);
    auto step = lif_step(p, pot({c0}), pot({x}));
    const double u = c0 + x;
    if (step.spikes->value[0] == 1.0) {
      CHECK(step.carry->value[0] == p.u_reset);
    } else {
      CHECK(step.carry->value[0] == p.beta * u);  // bit-exact decay
    }
  }
}

TEST_CASE("surrogate window shape and unit mass") {
  const double w = 0.8;
  CHECK(surrogate_backward(0.0, w) == doctest::Approx(1.0 / w));
  CHECK(surrogate_backward(w, w) == 0.0);
  CHECK(surrogate_backward(-w - 0.1, w) == 0.0);
  CHECK(surrogate_backward(1e9, w) == 0.0);
  // numeric quadrature of the triangle over its support
  const int n = 200000;
  const double lo = -1.0, hi = 1.0;
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = lo + (hi - lo) * (i + 0.5) / n;
    integral += surrogate_backward(u, w) * (hi - lo) / n;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(surrogate_backward(0.0, 0.0), ContractError);
}

TEST_CASE("spike_gate forward is Heaviside with x >= 0 firing") {
  auto x = constant(TensorD({3}, {-0.1, 0.0, 0.1}));
  auto s = spike_gate(x, 1.0);
  CHECK(s->value[0] == 0.0);
  CHECK(s->value[1] == 1.0);
  CHECK(s->value[2] == 1.0);
}

TEST_CASE("single LIF over T=3 matches finite differences of the relaxed net") {
  Rng rng(55);
  auto err = check_gradients(
      {{2}, {2}, {2}},
      [](const std::vector<Value<double>>& in, bool smooth) {
        LifParams p;
        Value<double> carry = constant(TensorD({2}));
        Value<double> acc;
        for (int t = 0; t < 3; ++t) {
          auto s = lif_step(p, carry, in[t], smooth);
          carry = s.carry;
          acc = acc ? add(acc, s.spikes) : s.spikes;
        }
        return mean_all(acc);
      },
      rng, 1e-5, -0.4, 1.4);
  CHECK(err < 1e-4);
}

TEST_CASE("spike gate gradient matches finite differences in smooth mode") {
  Rng rng(56);
  auto err = check_gradients(
      {{6}},
      [](const std::vector<Value<double>>& in, bool smooth) {
        return mean_all(spike_gate(in[0], 1.0, smooth));
      },
      rng, 1e-5, -1.5, 1.5);
  CHECK(err < 1e-4);
}

TEST_CASE("deterministic forward for a fixed seed") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    LifParams p;
    std::vector<Value<double>> inputs;
    for (int t = 0; t < 5; ++t) {
      TensorD x({8});
      for (int i = 0; i < 8; ++i) x[i] = rng.uniform(-1, 2);
      inputs.push_back(constant(x));
    }
    auto seq = lif_sequence(p, inputs);
    std::vector<double> flat;
    for (const auto& s : seq.steps)
      for (int64_t i = 0; i < s->value.size(); ++i) flat.push_back(s->value[i]);
    return flat;
  };
  CHECK(run(99) == run(99));
}
