#include "spikedrive/scenario.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spikedrive {

namespace {

constexpr double kCamHeight = 1.6;
constexpr double kHFovDeg = 70.0;
constexpr double kGroundRange = 80.0;
constexpr double kCmdLateral = 1.5;  // matches the planner's d_cmd default

const std::array<std::array<float, 3>, 6> kVehiclePalette = {{
    {0.90f, 0.12f, 0.12f},
    {0.15f, 0.45f, 0.95f},
    {0.95f, 0.85f, 0.10f},
    {0.10f, 0.80f, 0.30f},
    {0.85f, 0.20f, 0.85f},
    {0.95f, 0.55f, 0.10f},
}};

struct Lane {
  Pose2 at(double s) const {  // arc-length parameterisation
    return {origin.x + std::cos(origin.heading) * s,
            origin.y + std::sin(origin.heading) * s, origin.heading};
  }
  Pose2 origin;  // s = 0 point with direction
};

std::vector<Lane> road_lanes(const WorldMap& map) {
  const double o = map.lane_offset;
  return {
      {{-map.road_length, -o, 0.0}},            // eastbound
      {{map.road_length, o, M_PI}},             // westbound
      {{o, -map.road_length, M_PI / 2}},        // northbound
      {{-o, map.road_length, -M_PI / 2}},       // southbound
  };
}

}  // namespace

std::vector<CameraRig> default_rig(int64_t n_cameras, int64_t image_h,
                                   int64_t image_w) {
  std::vector<CameraRig> rigs;
  const double fx = (static_cast<double>(image_w) / 2.0) /
                    std::tan(kHFovDeg * M_PI / 360.0);
  for (int64_t i = 0; i < n_cameras; ++i) {
    CameraRig rig;
    rig.cam_id = static_cast<int>(i);
    rig.intrinsics = {fx, fx, static_cast<double>(image_w) / 2.0,
                      static_cast<double>(image_h) / 2.0};
    rig.position = {0.0, 0.0, kCamHeight};
    rig.yaw = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_cameras);
    rigs.push_back(rig);
  }
  return rigs;
}

Scenario generate_scenario(const ScenarioConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Scenario sc;
  sc.config = config;
  sc.rigs = default_rig(config.n_cameras, config.image_h, config.image_w);

  Rng cmd_rng = rng.split("command");
  sc.command = config.maneuver.value_or(
      static_cast<Command>(cmd_rng.uniform_int(0, 2)));

  // ---- ego script: straight approach, then the commanded maneuver ----
  Rng ego_rng = rng.split("ego");
  const double v0 = ego_rng.uniform(3.4, 4.6);
  const double x_present = -ego_rng.uniform(5.5, 8.5);
  const double past_span = (config.n_past - 1) * config.frame_dt;
  const int64_t future_steps = static_cast<int64_t>(
      std::llround(std::max(config.sim_horizon,
                            config.n_future * config.frame_dt) / config.frame_dt));
  const int64_t steps = config.n_past + future_steps;  // poses incl. start

  EgoState state{x_present - v0 * past_span, -sc.map.lane_offset, 0.0, v0};
  auto steering = [&](const EgoState& s) {
    // turn triggers sit far enough out that every jittered approach still
    // accumulates the commanded lateral displacement within the horizon
    switch (sc.command) {
      case Command::Left:
        return (s.x > -6.5 && s.heading < M_PI / 2 - 0.05) ? 0.5 : 0.0;
      case Command::Right:
        return (s.x > -7.0 && s.heading > -M_PI / 2 + 0.05) ? -0.6 : 0.0;
      default:
        return 0.0;
    }
  };
  sc.ego_track.push_back(state.pose());
  sc.ego_speeds.push_back(state.speed);
  for (int64_t k = 1; k < steps; ++k) {
    Control c{0.0, steering(state)};
    state = bicycle_step(state, c, config.frame_dt, 2.7);
    sc.ego_controls.push_back(c);
    sc.ego_track.push_back(state.pose());
    sc.ego_speeds.push_back(state.speed);
  }

  // expert trajectory: present onward, expressed in the present ego frame
  const Pose2 present = sc.ego_track[sc.present_step()];
  sc.expert.dt = config.frame_dt;
  for (int64_t k = sc.present_step(); k < steps; ++k) {
    const Pose2& wp = sc.ego_track[k];
    const Vec2 local = present.to_local({wp.x, wp.y});
    sc.expert.poses.push_back(
        {local.x, local.y, wp.heading - present.heading, sc.ego_speeds[k]});
    if (k + 1 < steps)
      sc.expert.controls.push_back(sc.ego_controls[k]);
  }
  sc.target = {sc.expert.poses.back().x, sc.expert.poses.back().y};

  // maneuver consistency: the scripted path must match its command
  const double terminal_lat = sc.expert.poses.back().y;
  const bool ok = sc.command == Command::Left    ? terminal_lat > kCmdLateral
                  : sc.command == Command::Right ? terminal_lat < -kCmdLateral
                                                 : std::abs(terminal_lat) <= kCmdLateral;
  if (!ok)
    throw FlaggedError("generate_scenario: maneuver infeasible for the map");

  // ---- vehicles on lane centerlines, constant speed ----
  Rng veh_rng = rng.split("vehicles");
  const auto lanes = road_lanes(sc.map);
  for (int64_t i = 0; i < config.n_vehicles; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      const auto& lane = lanes[static_cast<size_t>(veh_rng.uniform_int(0, 3))];
      const double s_present = veh_rng.uniform(12.0, 2.0 * sc.map.road_length - 12.0);
      const double speed = veh_rng.uniform(2.0, 5.5);
      const Pose2 at_present = lane.at(s_present);
      // keep clear of the ego and the other vehicles at the present frame
      const double dx = at_present.x - present.x, dy = at_present.y - present.y;
      if (std::sqrt(dx * dx + dy * dy) < 8.0) continue;
      bool clash = false;
      for (const auto& other : sc.agents) {
        if (!other.is_vehicle) continue;
        const Pose2& op = other.poses[sc.present_step()];
        const double ox = at_present.x - op.x, oy = at_present.y - op.y;
        if (std::sqrt(ox * ox + oy * oy) < 7.0) clash = true;
      }
      if (clash) continue;

      AgentTrack track;
      track.id = static_cast<int32_t>(sc.agents.size()) + 1;
      track.is_vehicle = true;
      track.length = 4.4 + veh_rng.uniform(-0.3, 0.5);
      track.width = 1.9 + veh_rng.uniform(-0.1, 0.1);
      track.height = 1.5 + veh_rng.uniform(-0.1, 0.15);
      track.color = kVehiclePalette[static_cast<size_t>(i) % kVehiclePalette.size()];
      for (int64_t k = 0; k < steps; ++k) {
        const double t = (k - sc.present_step()) * config.frame_dt;
        track.poses.push_back(lane.at(s_present + speed * t));
      }
      sc.agents.push_back(std::move(track));
      placed = true;
    }
  }

  // ---- pedestrians random-walking on crosswalk bands ----
  Rng ped_rng = rng.split("pedestrians");
  for (int64_t i = 0; i < config.n_pedestrians; ++i) {
    AgentTrack track;
    track.id = static_cast<int32_t>(sc.agents.size()) + 1;
    track.is_vehicle = false;
    track.length = 0.5;
    track.width = 0.5;
    track.height = 1.75;
    track.color = {1.0f, 0.55f, 0.15f};
    const double band_mid = (sc.map.crosswalk_near + sc.map.crosswalk_far) / 2.0;
    const double along = band_mid * (ped_rng.uniform_int(0, 1) ? 1.0 : -1.0);
    const bool on_ew_road = ped_rng.uniform_int(0, 1) == 1;
    double across = ped_rng.uniform(-3.0, 3.0);
    const double limit = sc.map.road_half_width - 0.3;
    for (int64_t k = 0; k < steps; ++k) {
      const Vec2 p = on_ew_road ? Vec2{along, across} : Vec2{across, along};
      track.poses.push_back({p.x, p.y, 0.0});
      across = std::clamp(across + ped_rng.uniform(-0.45, 0.45), -limit, limit);
    }
    sc.agents.push_back(std::move(track));
  }

  return sc;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

struct RenderBox {
  Pose2 pose;  // world
  double half_l, half_w, half_h;
  std::array<float, 3> color;
};

// Slab intersection of a world ray with an upright oriented box.
bool ray_box(const Vec3& origin, const Vec3& dir, const RenderBox& box,
             double& t_hit) {
  const double c = std::cos(box.pose.heading), s = std::sin(box.pose.heading);
  // ray into the box frame (centered at box center, z at half height)
  const double ox = origin.x - box.pose.x, oy = origin.y - box.pose.y;
  const double lz = origin.z - box.half_h;
  const double lx = c * ox + s * oy, ly = -s * ox + c * oy;
  const double dx = c * dir.x + s * dir.y, dy = -s * dir.x + c * dir.y;
  const double dz = dir.z;

  double t0 = 1e-4, t1 = 1e18;
  auto slab = [&](double o, double d, double half) {
    if (std::abs(d) < 1e-12) return std::abs(o) <= half;
    double ta = (-half - o) / d, tb = (half - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 <= t1;
  };
  if (!slab(lx, dx, box.half_l)) return false;
  if (!slab(ly, dy, box.half_w)) return false;
  if (!slab(lz, dz, box.half_h)) return false;
  t_hit = t0;
  return true;
}

std::array<float, 3> ground_color(const WorldMap& map, const Vec2& p) {
  if (map.crosswalk(p)) return {0.78f, 0.78f, 0.80f};
  if (map.lane_distance(p) < 0.15) return {0.95f, 0.95f, 0.90f};
  if (map.drivable(p)) return {0.30f, 0.30f, 0.33f};
  return {0.13f, 0.34f, 0.16f};
}

}  // namespace

TensorF render_frame(const Scenario& scenario, int64_t frame) {
  contract(frame >= 0 && frame < scenario.config.n_frames(),
           "render_frame: frame out of range");
  const int64_t step = scenario.frame_step(frame);
  const Pose2 ego = scenario.ego_track[step];
  const int64_t N = scenario.config.n_cameras;
  const int64_t H = scenario.config.image_h, W = scenario.config.image_w;

  std::vector<RenderBox> boxes;
  for (const auto& agent : scenario.agents)
    boxes.push_back({agent.poses[step], agent.length / 2.0, agent.width / 2.0,
                     agent.height / 2.0, agent.color});

  TensorF out({N, 3, H, W});
  const double ce = std::cos(ego.heading), se = std::sin(ego.heading);
  for (int64_t n = 0; n < N; ++n) {
    const CameraRig& rig = scenario.rigs[static_cast<size_t>(n)];
    const Vec2 cam_xy = ego.to_world({rig.position.x, rig.position.y});
    const Vec3 origin{cam_xy.x, cam_xy.y, rig.position.z};
#pragma omp parallel for schedule(static)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const Vec3 d_ego = rig.pixel_ray(w + 0.5, h + 0.5);
        const Vec3 dir{ce * d_ego.x - se * d_ego.y, se * d_ego.x + ce * d_ego.y,
                       d_ego.z};
        double best_t = 1e18;
        std::array<float, 3> color{0.55f, 0.70f, 0.90f};  // sky
        if (dir.z < -1e-9) {
          const double tg = -origin.z / dir.z;
          if (tg < kGroundRange) {
            best_t = tg;
            color = ground_color(scenario.map,
                                 {origin.x + dir.x * tg, origin.y + dir.y * tg});
          }
        }
        for (const auto& box : boxes) {
          double t_hit;
          if (ray_box(origin, dir, box, t_hit) && t_hit < best_t) {
            best_t = t_hit;
            color = box.color;
          }
        }
        for (int c = 0; c < 3; ++c)
          out[((n * 3 + c) * H + h) * W + w] = color[static_cast<size_t>(c)];
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ground truth rasters
// ---------------------------------------------------------------------------

GtRasters rasterize_gt(const Scenario& scenario, int64_t step, const Pose2& ref) {
  const BevSpec& bev = scenario.config.bev;
  const int64_t G = bev.cells;
  GtRasters gt;
  gt.vehicle = TensorF({G, G});
  gt.pedestrian = TensorF({G, G});
  gt.instance = TensorF({G, G});
  gt.drivable = TensorF({G, G});
  gt.lane = TensorF({G, G});
  gt.centerness = TensorF({G, G});
  gt.offset = TensorF({2, G, G});
  gt.flow = TensorF({2, G, G});

  for (int64_t i = 0; i < G; ++i)
    for (int64_t j = 0; j < G; ++j) {
      const Vec2 world = ref.to_world(bev.center_of(i, j));
      if (scenario.map.drivable(world)) gt.drivable[i * G + j] = 1.0f;
      if (scenario.map.lane_distance(world) < 0.25 &&
          scenario.map.drivable(world))
        gt.lane[i * G + j] = 1.0f;
    }

  const double sigma = 1.5;  // centerness spread, cells
  for (const auto& agent : scenario.agents) {
    const Pose2& wp = agent.poses[step];
    OrientedBox box{wp, agent.length, agent.width};
    const Vec2 local_center = ref.to_local({wp.x, wp.y});
    const double ci = (local_center.x + bev.extent() / 2) / bev.resolution - 0.5;
    const double cj = (local_center.y + bev.extent() / 2) / bev.resolution - 0.5;

    // footprint cells
    for (int64_t i = 0; i < G; ++i)
      for (int64_t j = 0; j < G; ++j) {
        const Vec2 world = ref.to_world(bev.center_of(i, j));
        if (!box.contains(world)) continue;
        if (agent.is_vehicle) {
          gt.vehicle[i * G + j] = 1.0f;
          gt.instance[i * G + j] = static_cast<float>(agent.id);
          gt.offset[0 * G * G + i * G + j] = static_cast<float>(ci - i);
          gt.offset[1 * G * G + i * G + j] = static_cast<float>(cj - j);
          if (step + 1 < scenario.sim_steps()) {
            const Pose2& np = agent.poses[step + 1];
            const Vec2 next_local = ref.to_local({np.x, np.y});
            const double ni = (next_local.x + bev.extent() / 2) / bev.resolution - 0.5;
            const double nj = (next_local.y + bev.extent() / 2) / bev.resolution - 0.5;
            gt.flow[0 * G * G + i * G + j] = static_cast<float>(ni - ci);
            gt.flow[1 * G * G + i * G + j] = static_cast<float>(nj - cj);
          }
        } else {
          gt.pedestrian[i * G + j] = 1.0f;
        }
      }

    // centerness heat around vehicle centers
    if (agent.is_vehicle) {
      const int64_t ri = static_cast<int64_t>(std::llround(ci));
      const int64_t rj = static_cast<int64_t>(std::llround(cj));
      for (int64_t i = std::max<int64_t>(0, ri - 5);
           i <= std::min<int64_t>(G - 1, ri + 5); ++i)
        for (int64_t j = std::max<int64_t>(0, rj - 5);
             j <= std::min<int64_t>(G - 1, rj + 5); ++j) {
          const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
          const float heat = static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
          gt.centerness[i * G + j] = std::max(gt.centerness[i * G + j], heat);
        }
    }
  }
  return gt;
}

SceneRecord build_scene(const Scenario& scenario) {
  const ScenarioConfig& cfg = scenario.config;
  const int64_t F = cfg.n_frames(), P = cfg.n_past, G = cfg.bev.cells;
  const int64_t S = scenario.sim_steps() - cfg.n_past;  // future occupancy steps

  SceneRecord rec;
  rec.config = cfg;
  rec.rigs = scenario.rigs;
  rec.command = scenario.command;
  rec.target = scenario.target;
  rec.expert = scenario.expert;

  rec.frames = TensorF({F, cfg.n_cameras, 3, cfg.image_h, cfg.image_w});
  rec.gt_vehicle = TensorF({F, G, G});
  rec.gt_pedestrian = TensorF({F, G, G});
  rec.gt_instance = TensorF({F, G, G});
  rec.gt_drivable = TensorF({P, G, G});
  rec.gt_lane = TensorF({P, G, G});
  rec.gt_centerness = TensorF({P, G, G});
  rec.gt_offset = TensorF({P, 2, G, G});
  rec.gt_flow = TensorF({P, 2, G, G});
  rec.gt_occupancy = TensorF({S, G, G});

  const Pose2 present = scenario.ego_track[scenario.present_step()];
  const int64_t frame_px = cfg.n_cameras * 3 * cfg.image_h * cfg.image_w;
  for (int64_t f = 0; f < F; ++f) {
    const TensorF img = render_frame(scenario, f);
    std::memcpy(rec.frames.data() + f * frame_px, img.data(),
                sizeof(float) * frame_px);
    const int64_t step = scenario.frame_step(f);
    // past frames in their own ego frame; future frames in the present frame
    const Pose2 ref = f < P ? scenario.ego_track[step] : present;
    const GtRasters gt = rasterize_gt(scenario, step, ref);
    std::memcpy(rec.gt_vehicle.data() + f * G * G, gt.vehicle.data(),
                sizeof(float) * G * G);
    std::memcpy(rec.gt_pedestrian.data() + f * G * G, gt.pedestrian.data(),
                sizeof(float) * G * G);
    std::memcpy(rec.gt_instance.data() + f * G * G, gt.instance.data(),
                sizeof(float) * G * G);
    if (f < P) {
      std::memcpy(rec.gt_drivable.data() + f * G * G, gt.drivable.data(),
                  sizeof(float) * G * G);
      std::memcpy(rec.gt_lane.data() + f * G * G, gt.lane.data(),
                  sizeof(float) * G * G);
      std::memcpy(rec.gt_centerness.data() + f * G * G, gt.centerness.data(),
                  sizeof(float) * G * G);
      std::memcpy(rec.gt_offset.data() + f * 2 * G * G, gt.offset.data(),
                  sizeof(float) * 2 * G * G);
      std::memcpy(rec.gt_flow.data() + f * 2 * G * G, gt.flow.data(),
                  sizeof(float) * 2 * G * G);
    }
    rec.frame_poses.push_back(scenario.ego_track[step]);
    rec.frame_speeds.push_back(scenario.ego_speeds[step]);
  }

  // future occupancy in the present ego frame (vehicles plus pedestrians)
  for (int64_t s = 0; s < S; ++s) {
    const GtRasters gt = rasterize_gt(scenario, cfg.n_past + s, present);
    for (int64_t q = 0; q < G * G; ++q)
      rec.gt_occupancy[s * G * G + q] =
          (gt.vehicle[q] != 0.0f || gt.pedestrian[q] != 0.0f) ? 1.0f : 0.0f;
  }
  return rec;
}

}  // namespace spikedrive
