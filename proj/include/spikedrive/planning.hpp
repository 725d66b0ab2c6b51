#pragma once

#include "spikedrive/geometry.hpp"
#include "spikedrive/layers.hpp"
#include "spikedrive/tensor.hpp"

namespace spikedrive {

struct EgoState {
  double x = 0, y = 0;
  double heading = 0;  // radians
  double speed = 0;    // m/s, never negative

  Pose2 pose() const { return {x, y, heading}; }
};

struct Control {
  double accel = 0;  // m/s^2
  double steer = 0;  // front-wheel angle, radians
};

// Timed pose sequence at fixed dt; poses[0] is the start state and controls[k]
// produces poses[k+1] under the bicycle model.
struct Trajectory {
  std::vector<EgoState> poses;
  std::vector<Control> controls;
  double dt = 0.5;
};

enum class Command { Forward, Left, Right };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::Forward: return "Forward";
    case Command::Left: return "Left";
    default: return "Right";
  }
}
inline Command command_from(const std::string& s) {
  if (s == "Forward") return Command::Forward;
  if (s == "Left") return Command::Left;
  if (s == "Right") return Command::Right;
  throw ContractError("unknown command: " + s);
}

struct CostWeights {
  double w_o = 1.0, w_v = 1.0, w_r = 1.0;
};

struct CostBreakdown {
  double f_o = 0, f_v = 0, f_r = 0;
  double total = 0;
};

// Predicted occupancy probabilities over future steps plus static map priors,
// all in the planning (present ego) frame.
struct OccupancyMap {
  TensorF occupancy;  // [steps, G, G] in [0, 1]
  TensorF drivable;   // [G, G]
  TensorF lane;       // [G, G]
};

struct PlannerParams {
  double horizon = 3.0;
  double dt = 0.5;
  double wheelbase = 2.7;
  double steer_max = 0.6;
  double accel_max = 3.0;
  int64_t n_steer = 7;
  int64_t n_speed = 5;
  double max_target_speed = 8.0;
  double d_cmd = 1.5;  // command filter lateral threshold (m)
  double c_max = 10.0;
  double lambda_accel = 0.1;
  double lambda_jerk = 0.1;
  double lambda_curv = 0.1;
  double lambda_progress = 1.0;
  double footprint_length = 4.5;
  double footprint_width = 2.0;
  double speed_margin = 0.1;  // footprint inflation per m/s
  int64_t sgru_hidden = 32;

  int64_t steps() const {
    return static_cast<int64_t>(std::llround(horizon / dt));
  }
};

// x' = x + v cos(th) dt, y' = y + v sin(th) dt,
// th' = th + (v / wheelbase) tan(steer) dt, v' = max(0, v + a dt)
EgoState bicycle_step(const EgoState& state, const Control& control, double dt,
                      double wheelbase);

// Deterministic grid over (steer, target speed) pairs integrated with the
// bicycle model; candidate index = i_steer * n_speed + i_speed.
std::vector<Trajectory> sample_trajectories(const EgoState& ego,
                                            const PlannerParams& params);

// BEV cells covered by the ego footprint at `pose`, inflated by the
// speed-scaled safety margin.
std::vector<int64_t> footprint_cells(const Pose2& pose, double speed,
                                     const PlannerParams& params,
                                     const BevSpec& bev);

// Multi-component trajectory cost:
//   f_o: occupancy summed over the swept (inflated) footprint
//   f_v: clipped cost-volume samples along the path
//   f_r: quadratic comfort penalties minus progress toward the target
CostBreakdown evaluate_cost(const Trajectory& traj, const OccupancyMap& occ,
                            const TensorF& cost_volume, const Vec2& target,
                            const CostWeights& weights,
                            const PlannerParams& params, const BevSpec& bev);

struct Selection {
  int64_t index = -1;
  bool fallback = false;  // command filter eliminated every candidate
};

// Command filter on terminal lateral displacement, then argmin total cost;
// ties break toward the lowest index.
Selection select_best(const std::vector<Trajectory>& trajs,
                      const std::vector<CostBreakdown>& costs, Command command,
                      const PlannerParams& params);

// ---------------------------------------------------------------------------
// spiking GRU
// ---------------------------------------------------------------------------

// Gates pass through the Heaviside step (1 for x >= 0), keeping the hidden
// state binary:
//   r = Th(W_ir x + b_ir + W_hr h + b_hr)
//   z = Th(W_iz x + b_iz + W_hz h + b_hz)
//   n = Th(W_in x + b_in + r . (W_hn h + b_hn))
//   h' = (1 - z) . n + z . h
template <typename T>
struct SgruWeights {
  Value<T> w_ir, w_hr, b_ir, b_hr;
  Value<T> w_iz, w_hz, b_iz, b_hz;
  Value<T> w_in, w_hn, b_in, b_hn;

  static SgruWeights create(ParamRegistry<T>& reg, const Rng& rng,
                            const std::string& name, int64_t in, int64_t hidden) {
    auto mk_w = [&](const std::string& tag, int64_t rows, int64_t cols) {
      return reg.add(name + "." + tag,
                     kaiming_init<T>(rng.split(name + "." + tag), {rows, cols}, cols));
    };
    auto mk_b = [&](const std::string& tag, int64_t n) {
      return reg.add(name + "." + tag, Tensor<T>({n}));
    };
    SgruWeights w;
    w.w_ir = mk_w("w_ir", hidden, in);
    w.w_hr = mk_w("w_hr", hidden, hidden);
    w.w_iz = mk_w("w_iz", hidden, in);
    w.w_hz = mk_w("w_hz", hidden, hidden);
    w.w_in = mk_w("w_in", hidden, in);
    w.w_hn = mk_w("w_hn", hidden, hidden);
    w.b_ir = mk_b("b_ir", hidden);
    w.b_hr = mk_b("b_hr", hidden);
    w.b_iz = mk_b("b_iz", hidden);
    w.b_hz = mk_b("b_hz", hidden);
    w.b_in = mk_b("b_in", hidden);
    w.b_hn = mk_b("b_hn", hidden);
    return w;
  }
};

template <typename T>
Value<T> sgru_cell(const Value<T>& x_t, const Value<T>& h_prev,
                   const SgruWeights<T>& w, T surrogate_width = T(1),
                   bool smooth = false) {
  contract(x_t->value.rank() == 2 && h_prev->value.rank() == 2,
           "sgru_cell expects [B, n] inputs");
  auto gate = [&](const Value<T>& pre) {
    return spike_gate(pre, surrogate_width, smooth);
  };
  Value<T> r = gate(add(dense(x_t, w.w_ir, w.b_ir), dense(h_prev, w.w_hr, w.b_hr)));
  Value<T> z = gate(add(dense(x_t, w.w_iz, w.b_iz), dense(h_prev, w.w_hz, w.b_hz)));
  Value<T> n = gate(add(dense(x_t, w.w_in, w.b_in),
                        mul(r, dense(h_prev, w.w_hn, w.b_hn))));
  Value<T> keep = mul(z, h_prev);
  Value<T> fresh = mul(affine(z, T(-1), T(1)), n);  // (1 - z) . n
  return add(fresh, keep);
}

}  // namespace spikedrive
