#include "spikedrive/planning.hpp"

#include <algorithm>
#include <cmath>

namespace spikedrive {

EgoState bicycle_step(const EgoState& state, const Control& control, double dt,
                      double wheelbase) {
  contract(dt > 0, "bicycle_step: dt must be positive");
  contract(wheelbase > 0, "bicycle_step: wheelbase must be positive");
  EgoState next;
  next.x = state.x + state.speed * std::cos(state.heading) * dt;
  next.y = state.y + state.speed * std::sin(state.heading) * dt;
  next.heading =
      state.heading + state.speed / wheelbase * std::tan(control.steer) * dt;
  next.speed = std::max(0.0, state.speed + control.accel * dt);
  return next;
}

std::vector<Trajectory> sample_trajectories(const EgoState& ego,
                                            const PlannerParams& params) {
  contract(params.n_steer >= 1 && params.n_speed >= 1,
           "sample_trajectories: empty sampling grid");
  const int64_t K = params.steps();
  std::vector<Trajectory> out;
  out.reserve(static_cast<size_t>(params.n_steer * params.n_speed));
  for (int64_t si = 0; si < params.n_steer; ++si) {
    const double steer =
        params.n_steer == 1
            ? 0.0
            : -params.steer_max +
                  2.0 * params.steer_max * static_cast<double>(si) /
                      static_cast<double>(params.n_steer - 1);
    for (int64_t vi = 0; vi < params.n_speed; ++vi) {
      const double v_target = params.max_target_speed * static_cast<double>(vi) /
                              static_cast<double>(std::max<int64_t>(1, params.n_speed - 1));
      const double accel = std::clamp((v_target - ego.speed) / params.horizon,
                                      -params.accel_max, params.accel_max);
      Trajectory traj;
      traj.dt = params.dt;
      traj.poses.push_back(ego);
      EgoState cur = ego;
      for (int64_t k = 0; k < K; ++k) {
        Control c{accel, steer};
        cur = bicycle_step(cur, c, params.dt, params.wheelbase);
        traj.controls.push_back(c);
        traj.poses.push_back(cur);
      }
      out.push_back(std::move(traj));
    }
  }
  return out;
}

std::vector<int64_t> footprint_cells(const Pose2& pose, double speed,
                                     const PlannerParams& params,
                                     const BevSpec& bev) {
  const double margin = params.speed_margin * std::max(0.0, speed);
  OrientedBox box{pose, params.footprint_length + margin,
                  params.footprint_width + margin};
  // cell centers inside the oriented box, scanned over its bounding rectangle
  const auto corners = box.corners();
  double min_x = corners[0].x, max_x = corners[0].x;
  double min_y = corners[0].y, max_y = corners[0].y;
  for (const auto& c : corners) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  const double half = bev.extent() / 2.0;
  auto clamp_cell = [&](double v) {
    return std::clamp<int64_t>(
        static_cast<int64_t>(std::floor((v + half) / bev.resolution)), 0,
        bev.cells - 1);
  };
  std::vector<int64_t> cells;
  const int64_t i0 = clamp_cell(min_x), i1 = clamp_cell(max_x);
  const int64_t j0 = clamp_cell(min_y), j1 = clamp_cell(max_y);
  for (int64_t i = i0; i <= i1; ++i)
    for (int64_t j = j0; j <= j1; ++j) {
      const Vec2 center = bev.center_of(i, j);
      if (box.contains(center)) cells.push_back(i * bev.cells + j);
    }
  return cells;
}

CostBreakdown evaluate_cost(const Trajectory& traj, const OccupancyMap& occ,
                            const TensorF& cost_volume, const Vec2& target,
                            const CostWeights& weights,
                            const PlannerParams& params, const BevSpec& bev) {
  contract(traj.poses.size() >= 2, "evaluate_cost: trajectory too short");
  const int64_t occ_steps = occ.occupancy.dim(0);
  contract(occ_steps >= 1, "evaluate_cost: empty occupancy map");
  const int64_t grid = bev.cells * bev.cells;

  double sum_occ = 0, sum_cv = 0;
  for (size_t k = 1; k < traj.poses.size(); ++k) {
    const EgoState& p = traj.poses[k];
    const int64_t step = std::min<int64_t>(static_cast<int64_t>(k) - 1, occ_steps - 1);
    const float* occ_grid = occ.occupancy.data() + step * grid;
    for (int64_t cell : footprint_cells(p.pose(), p.speed, params, bev)) {
      const float v = occ_grid[cell];
      if (std::isnan(v)) throw FlaggedError("evaluate_cost: NaN in occupancy");
      sum_occ += v;
    }
    // cost volume sampled at the pose cell
    int64_t ci, cj;
    if (bev.cell_of(p.x, p.y, ci, cj)) {
      const int64_t cv_step = std::min(step, cost_volume.dim(0) - 1);
      const float v = cost_volume[cv_step * grid + ci * bev.cells + cj];
      if (std::isnan(v)) throw FlaggedError("evaluate_cost: NaN in cost volume");
      sum_cv += std::clamp<double>(v, -params.c_max, params.c_max);
    }
  }

  // comfort: lateral acceleration, jerk and curvature from the controls
  double sum_alat2 = 0, sum_jerk2 = 0, sum_curv2 = 0;
  for (size_t k = 0; k < traj.controls.size(); ++k) {
    const double curv = std::tan(traj.controls[k].steer) / params.wheelbase;
    const double v = traj.poses[k].speed;
    const double alat = v * v * curv;
    sum_alat2 += alat * alat;
    sum_curv2 += curv * curv;
    if (k + 1 < traj.controls.size()) {
      const double jerk =
          (traj.controls[k + 1].accel - traj.controls[k].accel) / traj.dt;
      sum_jerk2 += jerk * jerk;
    }
  }
  const Vec2 start{traj.poses.front().x, traj.poses.front().y};
  const Vec2 end{traj.poses.back().x, traj.poses.back().y};
  const double progress = (target - start).norm() - (target - end).norm();

  CostBreakdown cb;
  cb.f_o = weights.w_o * sum_occ;
  cb.f_v = weights.w_v * sum_cv;
  cb.f_r = weights.w_r * (params.lambda_accel * sum_alat2 +
                          params.lambda_jerk * sum_jerk2 +
                          params.lambda_curv * sum_curv2) -
           weights.w_r * params.lambda_progress * progress;
  cb.total = cb.f_o + cb.f_v + cb.f_r;
  return cb;
}

Selection select_best(const std::vector<Trajectory>& trajs,
                      const std::vector<CostBreakdown>& costs, Command command,
                      const PlannerParams& params) {
  contract(!trajs.empty(), "select_best: empty candidate set");
  contract(trajs.size() == costs.size(), "select_best: cost count mismatch");

  auto passes = [&](const Trajectory& t) {
    const Pose2 start = t.poses.front().pose();
    const Vec2 terminal{t.poses.back().x, t.poses.back().y};
    const double lat = start.to_local(terminal).y;
    switch (command) {
      case Command::Left: return lat > params.d_cmd;
      case Command::Right: return lat < -params.d_cmd;
      default: return std::abs(lat) <= params.d_cmd;
    }
  };

  Selection sel;
  double best = 0;
  for (size_t i = 0; i < trajs.size(); ++i) {
    if (!passes(trajs[i])) continue;
    if (sel.index < 0 || costs[i].total < best) {
      sel.index = static_cast<int64_t>(i);
      best = costs[i].total;
    }
  }
  if (sel.index < 0) {  // filter removed everything: unfiltered argmin
    sel.fallback = true;
    for (size_t i = 0; i < trajs.size(); ++i)
      if (sel.index < 0 || costs[i].total < best) {
        sel.index = static_cast<int64_t>(i);
        best = costs[i].total;
      }
  }
  return sel;
}

}  // namespace spikedrive
