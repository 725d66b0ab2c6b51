#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "spikedrive/dataset.hpp"

using namespace spikedrive;
namespace fs = std::filesystem;

namespace {

ScenarioConfig tiny_config(uint64_t seed) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.n_cameras = 4;
  cfg.image_h = 16;
  cfg.image_w = 24;
  cfg.bev = BevSpec{16, 0.75};
  cfg.n_vehicles = 2;
  cfg.n_pedestrians = 1;
  return cfg;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("same seed reproduces the scenario exactly") {
  auto cfg = tiny_config(1234);
  auto a = build_scene(generate_scenario(cfg));
  auto b = build_scene(generate_scenario(cfg));
  REQUIRE(a.frames.size() == b.frames.size());
  for (int64_t i = 0; i < a.frames.size(); ++i) CHECK(a.frames[i] == b.frames[i]);
  for (int64_t i = 0; i < a.gt_occupancy.size(); ++i)
    CHECK(a.gt_occupancy[i] == b.gt_occupancy[i]);
  CHECK(a.expert.poses.size() == b.expert.poses.size());
  for (size_t k = 0; k < a.expert.poses.size(); ++k) {
    CHECK(a.expert.poses[k].x == b.expert.poses[k].x);
    CHECK(a.expert.poses[k].y == b.expert.poses[k].y);
  }
}

TEST_CASE("maneuvers match their commands") {
  for (auto cmd : {Command::Forward, Command::Left, Command::Right}) {
    auto cfg = tiny_config(77);
    cfg.maneuver = cmd;
    auto sc = generate_scenario(cfg);
    const double lat = sc.expert.poses.back().y;
    switch (cmd) {
      case Command::Forward: CHECK(std::abs(lat) <= 1.5); break;
      case Command::Left: CHECK(lat > 1.5); break;
      case Command::Right: CHECK(lat < -1.5); break;
    }
  }
}

TEST_CASE("empty world produces empty occupancy ground truth") {
  auto cfg = tiny_config(5);
  cfg.n_vehicles = 0;
  cfg.n_pedestrians = 0;
  auto rec = build_scene(generate_scenario(cfg));
  for (int64_t i = 0; i < rec.gt_occupancy.size(); ++i)
    CHECK(rec.gt_occupancy[i] == 0.0f);
  for (int64_t i = 0; i < rec.gt_vehicle.size(); ++i)
    CHECK(rec.gt_vehicle[i] == 0.0f);
}

TEST_CASE("expert trajectory re-integrates under the bicycle model") {
  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    auto cfg = tiny_config(seed);
    auto sc = generate_scenario(cfg);
    EgoState s = sc.expert.poses.front();
    for (size_t k = 0; k < sc.expert.controls.size(); ++k) {
      s = bicycle_step(s, sc.expert.controls[k], sc.expert.dt, 2.7);
      CHECK(std::abs(s.x - sc.expert.poses[k + 1].x) < 1e-9);
      CHECK(std::abs(s.y - sc.expert.poses[k + 1].y) < 1e-9);
      CHECK(std::abs(s.heading - sc.expert.poses[k + 1].heading) < 1e-9);
    }
  }
}

TEST_CASE("an agent ahead of the front camera lands at the predicted pixel") {
  // hand-built world: one vehicle 5 m ahead of a stationary ego
  ScenarioConfig cfg = tiny_config(9);
  cfg.image_h = 64;
  cfg.image_w = 96;
  cfg.n_vehicles = 0;
  cfg.n_pedestrians = 0;
  cfg.maneuver = Command::Forward;
  Scenario sc = generate_scenario(cfg);
  // plant the agent relative to the present ego pose
  const Pose2 present = sc.ego_track[sc.present_step()];
  AgentTrack agent;
  agent.id = 1;
  agent.length = 2.0;
  agent.width = 2.0;
  agent.height = 1.6;
  agent.color = {0.9f, 0.1f, 0.1f};
  const Vec2 world = present.to_world({5.0, 0.0});
  for (int64_t k = 0; k < sc.sim_steps(); ++k)
    agent.poses.push_back({world.x, world.y, present.heading});
  sc.agents.push_back(agent);

  // hand projection of the box center (z at half height)
  const CameraRig& front = sc.rigs[0];
  double u, v, depth;
  REQUIRE(front.project({5.0, 0.0, 0.8}, u, v, depth));
  CHECK(depth == doctest::Approx(5.0));
  CHECK(u == doctest::Approx(48.0));  // centered horizontally
  const double fx = front.intrinsics.fx;
  CHECK(v == doctest::Approx(32.0 + fx * (1.6 - 0.8) / 5.0).epsilon(1e-9));
  REQUIRE(u >= 0);
  REQUIRE(u < 96);
  REQUIRE(v >= 0);
  REQUIRE(v < 64);

  const TensorF img = render_frame(sc, sc.present_step());
  const int64_t px = static_cast<int64_t>(u), py = static_cast<int64_t>(v);
  CHECK(img[(0 * 3 + 0) * 64 * 96 + py * 96 + px] == doctest::Approx(0.9f));
  CHECK(img[(0 * 3 + 1) * 64 * 96 + py * 96 + px] == doctest::Approx(0.1f));

  // the same agent behind the camera never appears in the front view
  for (auto& p : sc.agents[0].poses) {
    const Vec2 behind = present.to_world({-5.0, 0.0});
    p = {behind.x, behind.y, present.heading};
  }
  REQUIRE_FALSE(front.project({-5.0, 0.0, 0.8}, u, v, depth));
  const TensorF img2 = render_frame(sc, sc.present_step());
  for (int64_t q = 0; q < 64 * 96; ++q) {
    const bool is_agent_color =
        img2[q] == doctest::Approx(0.9f).epsilon(1e-6) &&
        img2[64 * 96 + q] == doctest::Approx(0.1f).epsilon(1e-6);
    CHECK_FALSE(is_agent_color);
  }
}

TEST_CASE("gt vehicle mask area tracks the footprint") {
  auto cfg = tiny_config(21);
  cfg.bev = BevSpec{48, 0.5};
  cfg.n_vehicles = 1;
  cfg.n_pedestrians = 0;
  auto sc = generate_scenario(cfg);
  REQUIRE(!sc.agents.empty());
  const auto& agent = sc.agents[0];
  // rasterize in the agent's own neighborhood so the box is fully inside
  const Pose2 ref{agent.poses[sc.present_step()].x - 2.0,
                  agent.poses[sc.present_step()].y, 0.0};
  auto gt = rasterize_gt(sc, sc.present_step(), ref);
  int64_t count = 0;
  for (int64_t i = 0; i < gt.vehicle.size(); ++i)
    if (gt.vehicle[i] != 0.0f) ++count;
  const double cell_area = cfg.bev.resolution * cfg.bev.resolution;
  const double expected = agent.length * agent.width / cell_area;
  const double edge_band =
      2.0 * (agent.length + agent.width) / cfg.bev.resolution;  // +-1 cell per edge
  CHECK(count > expected - edge_band);
  CHECK(count < expected + edge_band);
}

TEST_CASE("BEV center projects through the camera and back within one cell") {
  auto cfg = tiny_config(33);
  cfg.bev = BevSpec{48, 0.5};
  cfg.image_h = 64;
  cfg.image_w = 96;
  auto sc = generate_scenario(cfg);
  const Pose2 present = sc.ego_track[sc.present_step()];
  int checked = 0;
  for (const auto& agent : sc.agents) {
    if (!agent.is_vehicle) continue;
    const Pose2& wp = agent.poses[sc.present_step()];
    const Vec2 local = present.to_local({wp.x, wp.y});
    int64_t ci, cj;
    if (!cfg.bev.cell_of(local.x, local.y, ci, cj)) continue;
    for (const auto& rig : sc.rigs) {
      double u, v, depth;
      if (!rig.project({local.x, local.y, 0.0}, u, v, depth)) continue;
      if (u < 0 || u >= cfg.image_w || v < 0 || v >= cfg.image_h) continue;
      const Vec3 back = rig.unproject(u, v, depth);
      int64_t ri, rj;
      REQUIRE(cfg.bev.cell_of(back.x, back.y, ri, rj));
      CHECK(std::abs(ri - ci) <= 1);
      CHECK(std::abs(rj - cj) <= 1);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("dataset round trip is byte-identical and validated") {
  auto cfg = tiny_config(55);
  std::vector<SceneRecord> scenes;
  for (uint64_t s = 0; s < 2; ++s) {
    ScenarioConfig c = cfg;
    c.seed = 100 + s;
    scenes.push_back(build_scene(generate_scenario(c)));
  }
  const fs::path dir1 = fs::temp_directory_path() / "sdtest_ds1";
  const fs::path dir2 = fs::temp_directory_path() / "sdtest_ds2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  write_dataset(scenes, dir1.string(), 42);
  auto loaded = read_dataset(dir1.string());
  write_dataset(loaded, dir2.string(), 42);

  CHECK(file_bytes(dir1 / "manifest.json") == file_bytes(dir2 / "manifest.json"));
  CHECK(file_bytes(dir1 / "scene_0000" / "frames.bin") ==
        file_bytes(dir2 / "scene_0000" / "frames.bin"));
  CHECK(file_bytes(dir1 / "scene_0001" / "expert.json") ==
        file_bytes(dir2 / "scene_0001" / "expert.json"));

  // corrupting a blob's length fails naming the blob
  {
    std::ofstream out(dir1 / "scene_0000" / "gt_lane.bin",
                      std::ios::binary | std::ios::app);
    out.put(0);
  }
  try {
    read_dataset(dir1.string());
    FAIL("expected a FlaggedError");
  } catch (const FlaggedError& e) {
    CHECK(std::string(e.what()).find("gt_lane.bin") != std::string::npos);
  }

  // version bumps are rejected with a clear message
  {
    std::ifstream in(dir2 / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("\"format_version\": 1").size(),
                 "\"format_version\": 2");
    std::ofstream out(dir2 / "manifest.json");
    out << text;
  }
  try {
    read_dataset(dir2.string());
    FAIL("expected a FlaggedError");
  } catch (const FlaggedError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("scenario config validation lists every offending field") {
  ScenarioConfig cfg;
  cfg.image_h = 10;   // not a multiple of 8
  cfg.n_vehicles = -1;
  try {
    cfg.validate();
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.issues.size() == 2);
  }
}
