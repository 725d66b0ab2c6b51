#pragma once

#include <optional>

#include "spikedrive/geometry.hpp"
#include "spikedrive/planning.hpp"

namespace spikedrive {

struct ScenarioConfig {
  uint64_t seed = 0;
  int64_t n_cameras = 6;
  int64_t image_h = 64;
  int64_t image_w = 96;
  BevSpec bev{48, 0.5};
  int64_t n_vehicles = 3;
  int64_t n_pedestrians = 2;
  int64_t n_past = 3;
  int64_t n_future = 4;
  double frame_dt = 0.5;
  double sim_horizon = 3.0;  // agent simulation past the last frame
  std::optional<Command> maneuver;  // seeded draw when unset

  int64_t n_frames() const { return n_past + n_future; }
  void validate() const {
    std::vector<std::string> bad;
    if (n_cameras < 1) bad.push_back("n_cameras must be >= 1");
    if (image_h < 8 || image_h % 8) bad.push_back("image_h must be a positive multiple of 8");
    if (image_w < 8 || image_w % 8) bad.push_back("image_w must be a positive multiple of 8");
    if (n_vehicles < 0) bad.push_back("n_vehicles must be >= 0");
    if (n_pedestrians < 0) bad.push_back("n_pedestrians must be >= 0");
    if (n_past < 1) bad.push_back("n_past must be >= 1");
    if (n_future < 0) bad.push_back("n_future must be >= 0");
    if (frame_dt <= 0) bad.push_back("frame_dt must be positive");
    if (!bad.empty()) throw ValidationError(bad);
  }
};

// One moving box in the world: pose per simulation step.
struct AgentTrack {
  int32_t id = 0;
  bool is_vehicle = true;
  double length = 4.4, width = 1.9, height = 1.5;
  std::array<float, 3> color{1, 1, 1};
  std::vector<Pose2> poses;  // one per simulation step
};

// Crossroad map: two perpendicular two-lane roads through the origin, with
// crosswalk bands at the intersection approaches. All static geometry is
// derived from these constants.
struct WorldMap {
  double road_half_width = 3.5;
  double lane_offset = 1.75;
  double road_length = 40.0;
  double crosswalk_near = 6.5;
  double crosswalk_far = 8.0;

  bool drivable(const Vec2& p) const {
    const bool ew = std::abs(p.y) <= road_half_width && std::abs(p.x) <= road_length;
    const bool ns = std::abs(p.x) <= road_half_width && std::abs(p.y) <= road_length;
    return ew || ns;
  }
  bool crosswalk(const Vec2& p) const {
    const bool band_x = std::abs(p.x) >= crosswalk_near && std::abs(p.x) <= crosswalk_far;
    const bool band_y = std::abs(p.y) >= crosswalk_near && std::abs(p.y) <= crosswalk_far;
    return (band_x && std::abs(p.y) <= road_half_width) ||
           (band_y && std::abs(p.x) <= road_half_width);
  }
  // distance to the nearest lane centerline
  double lane_distance(const Vec2& p) const {
    double d = 1e9;
    if (std::abs(p.x) <= road_length)
      d = std::min({d, std::abs(p.y - lane_offset), std::abs(p.y + lane_offset)});
    if (std::abs(p.y) <= road_length)
      d = std::min({d, std::abs(p.x - lane_offset), std::abs(p.x + lane_offset)});
    return d;
  }
};

// Deterministic synthetic world: map, agent tracks, scripted ego maneuver,
// expert trajectory and the camera rig.
struct Scenario {
  ScenarioConfig config;
  WorldMap map;
  std::vector<AgentTrack> agents;
  std::vector<Pose2> ego_track;      // per simulation step
  std::vector<double> ego_speeds;    // per simulation step
  std::vector<Control> ego_controls; // between consecutive steps
  Command command = Command::Forward;
  Vec2 target;                       // present-ego-frame target point
  Trajectory expert;                 // present-ego-frame, planning horizon
  std::vector<CameraRig> rigs;

  int64_t sim_steps() const { return static_cast<int64_t>(ego_track.size()); }
  // simulation step of frame f (frame n_past-1 is the present, t = 0)
  int64_t frame_step(int64_t f) const { return f; }
  int64_t present_step() const { return config.n_past - 1; }
};

Scenario generate_scenario(const ScenarioConfig& config);

std::vector<CameraRig> default_rig(int64_t n_cameras, int64_t image_h,
                                   int64_t image_w);

// Rendered camera frames plus analytic ground truth for one scene.
//   frames:      [F, N, 3, H, W] pixel values in [0, 1]
//   seg/ped/instance: [F, G, G]; past frames in their own ego frame, future
//                frames in the present ego frame (prediction targets)
//   drivable/lane/centerness: [P, G, G]; offset/flow: [P, 2, G, G] (past only)
//   occupancy:   [S, G, G] future union occupancy in the present ego frame
struct SceneRecord {
  ScenarioConfig config;
  TensorF frames;
  TensorF gt_vehicle, gt_pedestrian, gt_instance;
  TensorF gt_drivable, gt_lane, gt_centerness, gt_offset, gt_flow;
  TensorF gt_occupancy;
  std::vector<CameraRig> rigs;
  std::vector<Pose2> frame_poses;  // ego pose per frame
  std::vector<double> frame_speeds;
  Command command = Command::Forward;
  Vec2 target;
  Trajectory expert;
};

// Renders one frame (all cameras) into [N, 3, H, W].
TensorF render_frame(const Scenario& scenario, int64_t frame);

// Ground-truth rasters for one simulation step, expressed in `ref` ego frame.
struct GtRasters {
  TensorF vehicle, pedestrian, instance;
  TensorF drivable, lane, centerness, offset, flow;
};
GtRasters rasterize_gt(const Scenario& scenario, int64_t step, const Pose2& ref);

// Full scene: render every frame and assemble all ground truth.
SceneRecord build_scene(const Scenario& scenario);

}  // namespace spikedrive
