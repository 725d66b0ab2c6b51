#include "doctest.h"

#include "spikedrive/energy.hpp"
#include "spikedrive/evaluate.hpp"

using namespace spikedrive;

TEST_CASE("layer SOPs arithmetic") {
  LayerProfile p{"l", "conv", false, 1000.0, 0.2, 4};
  CHECK(layer_sops(p) == doctest::Approx(800.0));
  p.fr = 0.0;
  CHECK(layer_sops(p) == 0.0);
  p.fr = 1.0;
  p.timesteps = 1;
  CHECK(layer_sops(p) == doctest::Approx(1000.0));
  p.fr = 1.5;
  CHECK_THROWS_AS(layer_sops(p), ContractError);
}

TEST_CASE("energy estimate: first conv, two-layer fixture, ann mode") {
  EnergyModel model;  // 4.6 pJ MAC, 0.9 pJ AC
  LayerProfile first{"conv1", "conv", true, 1000.0, 1.0, 1};
  auto one = estimate_energy({first}, model, EnergyKind::Snn);
  CHECK(one.total_pj == doctest::Approx(4600.0));
  CHECK(one.total_mj == doctest::Approx(4.6e-6));

  LayerProfile second{"conv2", "conv", false, 1000.0, 0.2, 4};
  auto two = estimate_energy({first, second}, model, EnergyKind::Snn);
  CHECK(two.total_pj == doctest::Approx(5320.0));  // 4600 + 0.9 * 800

  auto ann = estimate_energy({first}, model, EnergyKind::Ann);
  CHECK(ann.total_pj == doctest::Approx(4600.0));

  LayerProfile fc{"fc1", "fc", false, 500.0, 0.5, 2};
  auto mixed = estimate_energy({first, second, fc}, model, EnergyKind::Snn);
  CHECK(mixed.total_pj == doctest::Approx(5320.0 + 0.9 * 500.0));

  // SNN mode requires exactly one first layer
  CHECK_THROWS_AS(estimate_energy({second}, model, EnergyKind::Snn), ContractError);
  LayerProfile dup = first;
  dup.id = "conv1b";
  CHECK_THROWS_AS(estimate_energy({first, dup}, model, EnergyKind::Snn),
                  ContractError);
}

TEST_CASE("energy ratios match the published comparisons") {
  CHECK(energy_ratio(344.11, 46.92) == doctest::Approx(7.33).epsilon(0.0015));
  CHECK(energy_ratio(3520.40, 46.92) == doctest::Approx(75.03).epsilon(0.0002));
  CHECK(energy_ratio(3.5, 3.5) == 1.0);
  CHECK_THROWS_AS(energy_ratio(1.0, 0.0), ContractError);
}

TEST_CASE("energy is monotone in fr, T and flops") {
  Rng rng(5);
  EnergyModel model;
  for (int trial = 0; trial < 100; ++trial) {
    LayerProfile first{"a", "conv", true, rng.uniform(10, 1000), 1.0, 1};
    LayerProfile mid{"b", "conv", false, rng.uniform(10, 1000),
                     rng.uniform(0, 0.9), rng.uniform_int(1, 8)};
    auto base = estimate_energy({first, mid}, model, EnergyKind::Snn).total_pj;
    LayerProfile more = mid;
    more.fr = std::min(1.0, mid.fr + 0.05);
    CHECK(estimate_energy({first, more}, model, EnergyKind::Snn).total_pj >= base);
    more = mid;
    more.timesteps += 1;
    CHECK(estimate_energy({first, more}, model, EnergyKind::Snn).total_pj >= base);
    more = mid;
    more.flops += 10;
    CHECK(estimate_energy({first, more}, model, EnergyKind::Snn).total_pj >= base);
  }
}

TEST_CASE("SNN beats ANN whenever fr*T*(e_ac/e_mac) < 1 on non-first layers") {
  Rng rng(7);
  EnergyModel model;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LayerProfile> profiles;
    profiles.push_back({"first", "conv", true, rng.uniform(100, 500), 1.0, 1});
    bool condition = true;
    for (int l = 0; l < 4; ++l) {
      LayerProfile p{"l" + std::to_string(l), l % 2 ? "fc" : "conv", false,
                     rng.uniform(100, 2000), rng.uniform(0, 1),
                     rng.uniform_int(1, 6)};
      condition = condition &&
                  (p.fr * static_cast<double>(p.timesteps) *
                       (model.e_ac_pj / model.e_mac_pj) < 1.0);
      profiles.push_back(p);
    }
    if (!condition) continue;
    const double snn = estimate_energy(profiles, model, EnergyKind::Snn).total_pj;
    const double ann = estimate_energy(profiles, model, EnergyKind::Ann).total_pj;
    CHECK(snn <= ann);
  }
}

TEST_CASE("measure_firing_rate") {
  TensorF zeros({2, 3});
  CHECK(measure_firing_rate(zeros) == 0.0);
  TensorF ones = TensorF::full({4}, 1.0f);
  CHECK(measure_firing_rate(ones) == 1.0);
  TensorF half({4}, {1.0f, 0.0f, 1.0f, 0.0f});
  CHECK(measure_firing_rate(half) == 0.5);
  TensorF empty;
  CHECK_THROWS_AS(measure_firing_rate(empty), ContractError);
  TensorF bad({1}, {0.5f});
  CHECK_THROWS_AS(measure_firing_rate(bad), ContractError);
}

TEST_CASE("profiled conv FLOPs match the hand count (MACs per kernel tap)") {
  Rng rng(9);
  ParamRegistry<float> reg;
  Conv2dLayer<float> conv(reg, rng, "c", 3, 8, 3, false);
  Profiler prof;
  Ctx<float> ctx;
  ctx.profiler = &prof;
  TensorF x({2, 3, 10, 12});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_int(0, 1);
  conv.forward(ctx, constant(x), true);
  auto profiles = layer_profiles(prof);
  REQUIRE(profiles.size() == 1);
  // kernel taps x C_in x C_out x H_out x W_out (one MAC per tap)
  CHECK(profiles[0].flops == doctest::Approx(3.0 * 3 * 3 * 8 * 10 * 12));
  CHECK(profiles[0].is_first);
  CHECK(profiles[0].timesteps == 1);
  CHECK(profiles[0].fr == doctest::Approx(nonzero_fraction(x)));
}
