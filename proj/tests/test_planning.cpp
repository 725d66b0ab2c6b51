#include "doctest.h"

#include "spikedrive/planning.hpp"

#include "testing_util.hpp"

using namespace spikedrive;
using spikedrive::testing::check_gradients;

namespace {

PlannerParams desk_params() { return PlannerParams{}; }

OccupancyMap empty_occ(const BevSpec& bev, int64_t steps = 6) {
  OccupancyMap occ;
  occ.occupancy = TensorF({steps, bev.cells, bev.cells});
  occ.drivable = TensorF({bev.cells, bev.cells});
  occ.lane = TensorF({bev.cells, bev.cells});
  return occ;
}

}  // namespace

TEST_CASE("bicycle: zero steer goes straight, zero accel keeps speed") {
  EgoState s{0, 0, 0, 3.0};
  for (int k = 0; k < 10; ++k) s = bicycle_step(s, {0.0, 0.0}, 0.1, 2.7);
  CHECK(s.y == 0.0);
  CHECK(s.heading == 0.0);
  CHECK(s.x == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.speed == 3.0);
}

TEST_CASE("bicycle: stationary state is a fixed point") {
  EgoState s{1, 2, 0.5, 0.0};
  EgoState n = bicycle_step(s, {0.0, 0.3}, 0.5, 2.7);
  CHECK(n.x == s.x);
  CHECK(n.y == s.y);
  CHECK(n.heading == s.heading);
  CHECK(n.speed == 0.0);
}

TEST_CASE("bicycle: speed never goes negative") {
  EgoState s{0, 0, 0, 1.0};
  EgoState n = bicycle_step(s, {-10.0, 0.0}, 1.0, 2.7);
  CHECK(n.speed == 0.0);
}

TEST_CASE("bicycle: constant steer traces the analytic circle") {
  const double delta = 0.3, wheelbase = 2.7, dt = 1e-3;
  EgoState s{0, 0, 0, 4.0};
  std::vector<Vec2> pts;
  for (int k = 0; k < 4000; ++k) {
    s = bicycle_step(s, {0.0, delta}, dt, wheelbase);
    pts.push_back({s.x, s.y});
  }
  // fitted circle via three well-separated points
  const Vec2 a = pts[0], b = pts[pts.size() / 2], c = pts.back();
  const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  const double ux = ((a.x * a.x + a.y * a.y) * (b.y - c.y) +
                     (b.x * b.x + b.y * b.y) * (c.y - a.y) +
                     (c.x * c.x + c.y * c.y) * (a.y - b.y)) / d;
  const double uy = ((a.x * a.x + a.y * a.y) * (c.x - b.x) +
                     (b.x * b.x + b.y * b.y) * (a.x - c.x) +
                     (c.x * c.x + c.y * c.y) * (b.x - a.x)) / d;
  const double radius = std::sqrt((a.x - ux) * (a.x - ux) + (a.y - uy) * (a.y - uy));
  CHECK(1.0 / radius == doctest::Approx(std::tan(delta) / wheelbase).epsilon(1e-6));
}

TEST_CASE("sampler: grid size, start pose, steering bounds") {
  auto params = desk_params();
  EgoState ego{1.0, -0.5, 0.1, 3.0};
  auto trajs = sample_trajectories(ego, params);
  CHECK(trajs.size() == 35);  // 7 steers x 5 speeds
  for (const auto& t : trajs) {
    CHECK(t.poses.size() == 7);  // horizon/dt + 1
    CHECK(t.poses.front().x == ego.x);
    CHECK(t.poses.front().y == ego.y);
    for (const auto& c : t.controls) {
      CHECK(std::abs(c.steer) <= params.steer_max + 1e-12);
      CHECK(std::abs(c.accel) <= params.accel_max + 1e-12);
    }
  }
  PlannerParams empty = params;
  empty.n_steer = 0;
  CHECK_THROWS_AS(sample_trajectories(ego, empty), ContractError);
}

TEST_CASE("bicycle consistency: re-integrating controls reproduces the poses") {
  auto trajs = sample_trajectories(EgoState{0, 0, 0, 4.0}, desk_params());
  for (const auto& t : trajs) {
    EgoState s = t.poses.front();
    for (size_t k = 0; k < t.controls.size(); ++k) {
      s = bicycle_step(s, t.controls[k], t.dt, desk_params().wheelbase);
      CHECK(std::abs(s.x - t.poses[k + 1].x) < 1e-9);
      CHECK(std::abs(s.y - t.poses[k + 1].y) < 1e-9);
      CHECK(std::abs(s.heading - t.poses[k + 1].heading) < 1e-9);
    }
  }
}

TEST_CASE("cost: free space, stationary at target, zero comfort penalty") {
  auto params = desk_params();
  BevSpec bev{48, 0.5};
  auto occ = empty_occ(bev);
  TensorF cv({6, 48, 48});
  Trajectory still;
  still.dt = params.dt;
  for (int k = 0; k < 7; ++k) still.poses.push_back({0, 0, 0, 0});
  for (int k = 0; k < 6; ++k) still.controls.push_back({0, 0});
  auto cb = evaluate_cost(still, occ, cv, {0.0, 0.0}, CostWeights{}, params, bev);
  CHECK(cb.f_o == 0.0);
  CHECK(cb.f_v == 0.0);
  CHECK(cb.f_r == 0.0);
  CHECK(cb.total == 0.0);
}

TEST_CASE("cost: an occupancy-1 cell under the footprint accrues w_o") {
  auto params = desk_params();
  params.footprint_length = 0.9;  // covers exactly one cell center
  params.footprint_width = 0.9;
  params.speed_margin = 0.0;
  BevSpec bev{48, 0.5};
  auto occ = empty_occ(bev, 6);
  // the ego reaches the cell center (2.25, 0.25) at the first step
  int64_t ci, cj;
  REQUIRE(bev.cell_of(2.25, 0.25, ci, cj));
  occ.occupancy[0 * 48 * 48 + ci * 48 + cj] = 1.0f;
  Trajectory t;
  t.dt = params.dt;
  t.poses.push_back({0, 0, 0, 4.0});
  t.poses.push_back({2.25, 0.25, 0, 4.0});
  t.controls.push_back({0, 0});
  CostWeights w{2.5, 1.0, 0.0};
  TensorF cv({6, 48, 48});
  auto cb = evaluate_cost(t, occ, cv, {10.0, 0.0}, w, params, bev);
  CHECK(cb.f_o == doctest::Approx(2.5));  // w_o * occupancy of that one cell
  CHECK(cb.total == doctest::Approx(cb.f_o + cb.f_v + cb.f_r));
}

TEST_CASE("cost: cost-volume samples are clipped at +-c_max") {
  auto params = desk_params();
  BevSpec bev{48, 0.5};
  auto occ = empty_occ(bev);
  TensorF cv({6, 48, 48});
  int64_t ci, cj;
  REQUIRE(bev.cell_of(2.0, 0.0, ci, cj));
  cv[0 * 48 * 48 + ci * 48 + cj] = 1e6f;  // far beyond c_max
  Trajectory t;
  t.dt = params.dt;
  t.poses.push_back({0, 0, 0, 4.0});
  t.poses.push_back({2.0, 0, 0, 4.0});
  t.controls.push_back({0, 0});
  CostWeights w{1.0, 1.0, 0.0};
  auto cb = evaluate_cost(t, occ, cv, {10.0, 0.0}, w, params, bev);
  CHECK(cb.f_v == doctest::Approx(params.c_max));
  cv[0 * 48 * 48 + ci * 48 + cj] = -1e6f;
  auto cb2 = evaluate_cost(t, occ, cv, {10.0, 0.0}, w, params, bev);
  CHECK(cb2.f_v == doctest::Approx(-params.c_max));
}

TEST_CASE("cost: NaN rasters are flagged") {
  auto params = desk_params();
  BevSpec bev{16, 0.5};
  auto occ = empty_occ(bev, 1);
  occ.occupancy[0] = std::numeric_limits<float>::quiet_NaN();
  Trajectory t;
  t.dt = params.dt;
  t.poses.push_back({-3.5, -3.5, 0, 1.0});
  t.poses.push_back({-3.0, -3.5, 0, 1.0});
  t.controls.push_back({0, 0});
  TensorF cv({1, 16, 16});
  CHECK_THROWS_AS(
      evaluate_cost(t, occ, cv, {0, 0}, CostWeights{}, params, bev),
      FlaggedError);
}

TEST_CASE("selection: safety dominance, command filter, ties") {
  auto params = desk_params();
  // two candidates with hand-made costs
  Trajectory straight;
  straight.dt = 0.5;
  for (int k = 0; k < 7; ++k)
    straight.poses.push_back({k * 2.0, 0.0, 0.0, 4.0});
  Trajectory left = straight;
  for (int k = 0; k < 7; ++k) left.poses[static_cast<size_t>(k)].y = k * 0.8;

  // free vs colliding with equal other costs: free one wins when w_o > 0
  std::vector<CostBreakdown> costs(2);
  costs[0] = {1.0, 0.5, 0.5, 2.0};  // colliding straight
  costs[1] = {0.0, 0.5, 0.5, 1.0};  // free straight
  auto sel = select_best({straight, straight}, costs, Command::Forward, params);
  CHECK(sel.index == 1);
  CHECK_FALSE(sel.fallback);

  // Left command excludes straight candidates when a left candidate exists
  costs[0] = {0, 0, 0, 0.0};  // straight, cheaper
  costs[1] = {0, 0, 0, 5.0};  // turns left, dearer
  sel = select_best({straight, left}, costs, Command::Left, params);
  CHECK(sel.index == 1);

  // filter that removes everything falls back to the unfiltered argmin
  sel = select_best({straight}, {CostBreakdown{0, 0, 0, 3.0}}, Command::Left, params);
  CHECK(sel.index == 0);
  CHECK(sel.fallback);

  // exact ties resolve to the lowest index
  costs[0] = {0, 0, 0, 1.0};
  costs[1] = {0, 0, 0, 1.0};
  sel = select_best({straight, straight}, costs, Command::Forward, params);
  CHECK(sel.index == 0);
}

TEST_CASE("selection: scaling all weights never changes the argmin") {
  Rng rng(7);
  auto params = desk_params();
  BevSpec bev{32, 0.5};
  auto trajs = sample_trajectories(EgoState{0, 0, 0, 3.0}, params);
  for (int trial = 0; trial < 20; ++trial) {
    OccupancyMap occ = empty_occ(bev, 6);
    for (int64_t i = 0; i < occ.occupancy.size(); ++i)
      occ.occupancy[i] = rng.uniform(0, 1) < 0.1 ? 1.0f : 0.0f;
    TensorF cv({6, 32, 32});
    for (int64_t i = 0; i < cv.size(); ++i) cv[i] = static_cast<float>(rng.uniform(-2, 2));
    CostWeights w{rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
    const double lambda = rng.uniform(0.1, 9.0);
    CostWeights ws{w.w_o * lambda, w.w_v * lambda, w.w_r * lambda};
    std::vector<CostBreakdown> c1, c2;
    for (const auto& t : trajs) {
      c1.push_back(evaluate_cost(t, occ, cv, {12, 0}, w, params, bev));
      c2.push_back(evaluate_cost(t, occ, cv, {12, 0}, ws, params, bev));
    }
    auto s1 = select_best(trajs, c1, Command::Forward, params);
    auto s2 = select_best(trajs, c2, Command::Forward, params);
    CHECK(s1.index == s2.index);
  }
}

TEST_CASE("sgru: zero weights keep the hidden state (Theta(0) = 1)") {
  ParamRegistry<double> reg;
  auto w = SgruWeights<double>::create(reg, Rng(1), "g", 3, 4);
  for (auto& p : reg.params()) p.value->value.fill(0.0);
  TensorD h0({1, 4}, {1.0, 0.0, 1.0, 0.0});
  auto h1 = sgru_cell(constant(TensorD({1, 3})), constant(h0), w);
  for (int i = 0; i < 4; ++i) CHECK(h1->value[i] == h0[i]);
}

TEST_CASE("sgru: binary hidden state stays binary") {
  Rng rng(3);
  ParamRegistry<double> reg;
  auto w = SgruWeights<double>::create(reg, rng, "g", 5, 8);
  TensorD h({1, 8});
  for (int i = 0; i < 8; ++i) h[i] = rng.uniform_int(0, 1);
  Value<double> hv = constant(h);
  for (int t = 0; t < 12; ++t) {
    TensorD x({1, 5});
    for (int i = 0; i < 5; ++i) x[i] = rng.uniform(-2, 2);
    hv = sgru_cell(constant(x), hv, w);
    for (int i = 0; i < 8; ++i) CHECK((hv->value[i] == 0.0 || hv->value[i] == 1.0));
  }
}

TEST_CASE("sgru: hand-evaluated 3-unit cell") {
  ParamRegistry<double> reg;
  auto w = SgruWeights<double>::create(reg, Rng(1), "g", 2, 3);
  // overwrite with a small hand-checkable configuration
  auto setm = [&](Value<double> v, std::vector<double> vals) {
    for (size_t i = 0; i < vals.size(); ++i) v->value[static_cast<int64_t>(i)] = vals[i];
  };
  setm(w.w_ir, {1, 0, 0, 1, -1, 1});        // [3x2]
  setm(w.w_hr, {0, 0, 0, 0, 0, 0, 0, 0, 0});
  setm(w.b_ir, {-0.5, 0.5, 0});
  setm(w.b_hr, {0, 0, 0});
  setm(w.w_iz, {0, 0, 0, 0, 0, 0});
  setm(w.w_hz, {0, 0, 0, 0, 0, 0, 0, 0, 0});
  setm(w.b_iz, {-1, -1, 1});
  setm(w.b_hz, {0, 0, 0});
  setm(w.w_in, {1, 1, 0, 0, 0, 0});
  setm(w.w_hn, {0, 0, 0, 0, 0, 0, 0, 0, 0});
  setm(w.b_in, {0, -5, 0});
  setm(w.b_hn, {0, 0, 0});
  const TensorD x({1, 2}, {1.0, -1.0});
  const TensorD h({1, 3}, {1.0, 0.0, 1.0});
  // r = Th([1*1+0*(-1)-0.5, 0*1+1*(-1)+0.5, -1*1+1*(-1)+0]) = Th([0.5,-0.5,-2]) = [1,0,0]
  // z = Th([-1,-1,1]) = [0,0,1]
  // n = Th([1*1+1*(-1)+0, -5, 0] + r.(0)) = Th([0,-5,0]) = [1,0,1]
  // h' = (1-z).n + z.h = [1,0,?]: unit 2: z=1 -> h=1
  auto h1 = sgru_cell(constant(x), constant(h), w);
  CHECK(h1->value[0] == 1.0);
  CHECK(h1->value[1] == 0.0);
  CHECK(h1->value[2] == 1.0);
}

TEST_CASE("sgru gradients match finite differences in smooth mode") {
  Rng rng(9);
  auto err = check_gradients(
      {{1, 3}, {1, 4}, {4, 3}, {4, 4}, {4}, {4}, {4, 3}, {4, 4}, {4}, {4},
       {4, 3}, {4, 4}, {4}, {4}},
      [](const std::vector<Value<double>>& in, bool smooth) {
        SgruWeights<double> w;
        w.w_ir = in[2];
        w.w_hr = in[3];
        w.b_ir = in[4];
        w.b_hr = in[5];
        w.w_iz = in[6];
        w.w_hz = in[7];
        w.b_iz = in[8];
        w.b_hz = in[9];
        w.w_in = in[10];
        w.w_hn = in[11];
        w.b_in = in[12];
        w.b_hn = in[13];
        auto h = sgru_cell(in[0], in[1], w, 1.0, smooth);
        return mean_all(h);
      },
      rng, 1e-5, -0.8, 0.8);
  CHECK(err < 1e-4);
}
