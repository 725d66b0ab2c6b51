#include "spikedrive/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace spikedrive {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_blob(const fs::path& path, const TensorF& t) {
  std::ofstream out(path, std::ios::binary);
  contract(out.good(), "cannot open blob for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.size()));
  contract(out.good(), "blob write failed: " + path.string());
}

TensorF read_blob(const fs::path& path, const std::vector<int64_t>& shape) {
  const int64_t expect = TensorF::compute_size(shape);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in.good())
    throw FlaggedError("dataset blob missing: " + path.string());
  const auto bytes = static_cast<int64_t>(in.tellg());
  if (bytes != expect * static_cast<int64_t>(sizeof(float)))
    throw FlaggedError("dataset blob size mismatch: " + path.string() +
                       " expected " + std::to_string(expect * sizeof(float)) +
                       " bytes, found " + std::to_string(bytes));
  in.seekg(0);
  TensorF t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(float) * t.size()));
  contract(in.good(), "blob read failed: " + path.string());
  return t;
}

json shape_json(const TensorF& t) { return json(t.shape()); }

json rig_json(const std::vector<CameraRig>& rigs) {
  json arr = json::array();
  for (const auto& r : rigs) {
    json k = json::array();
    for (const auto& row : r.intrinsics.matrix()) k.push_back(row);
    arr.push_back({{"cam_id", r.cam_id},
                   {"intrinsics", k},
                   {"position", {r.position.x, r.position.y, r.position.z}},
                   {"yaw", r.yaw}});
  }
  return arr;
}

std::vector<CameraRig> rig_from_json(const json& arr) {
  std::vector<CameraRig> rigs;
  for (const auto& e : arr) {
    CameraRig r;
    r.cam_id = e.at("cam_id").get<int>();
    std::array<std::array<double, 3>, 3> m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = e.at("intrinsics")[i][j].get<double>();
    r.intrinsics = Intrinsics::from_matrix(m);
    r.position = {e.at("position")[0].get<double>(),
                  e.at("position")[1].get<double>(),
                  e.at("position")[2].get<double>()};
    r.yaw = e.at("yaw").get<double>();
    rigs.push_back(r);
  }
  return rigs;
}

json expert_json(const SceneRecord& rec) {
  json poses = json::array();
  for (size_t k = 0; k < rec.expert.poses.size(); ++k) {
    const auto& p = rec.expert.poses[k];
    poses.push_back({k * rec.expert.dt, p.x, p.y, p.heading, p.speed});
  }
  json controls = json::array();
  for (const auto& c : rec.expert.controls)
    controls.push_back({c.accel, c.steer});
  json frame_poses = json::array();
  for (size_t f = 0; f < rec.frame_poses.size(); ++f) {
    const auto& p = rec.frame_poses[f];
    frame_poses.push_back({p.x, p.y, p.heading, rec.frame_speeds[f]});
  }
  return {{"command", to_string(rec.command)},
          {"target", {rec.target.x, rec.target.y}},
          {"dt", rec.expert.dt},
          {"poses", poses},
          {"controls", controls},
          {"frame_poses", frame_poses}};
}

void expert_from_json(const json& e, SceneRecord& rec) {
  rec.command = command_from(e.at("command").get<std::string>());
  rec.target = {e.at("target")[0].get<double>(), e.at("target")[1].get<double>()};
  rec.expert.dt = e.at("dt").get<double>();
  rec.expert.poses.clear();
  for (const auto& p : e.at("poses"))
    rec.expert.poses.push_back({p[1].get<double>(), p[2].get<double>(),
                                p[3].get<double>(), p[4].get<double>()});
  rec.expert.controls.clear();
  for (const auto& c : e.at("controls"))
    rec.expert.controls.push_back({c[0].get<double>(), c[1].get<double>()});
  rec.frame_poses.clear();
  rec.frame_speeds.clear();
  for (const auto& p : e.at("frame_poses")) {
    rec.frame_poses.push_back(
        {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    rec.frame_speeds.push_back(p[3].get<double>());
  }
}

struct BlobSpec {
  const char* name;
  TensorF SceneRecord::* field;
};

constexpr std::array<BlobSpec, 10> kBlobs = {{
    {"frames", &SceneRecord::frames},
    {"gt_vehicle", &SceneRecord::gt_vehicle},
    {"gt_pedestrian", &SceneRecord::gt_pedestrian},
    {"gt_instance", &SceneRecord::gt_instance},
    {"gt_drivable", &SceneRecord::gt_drivable},
    {"gt_lane", &SceneRecord::gt_lane},
    {"gt_centerness", &SceneRecord::gt_centerness},
    {"gt_offset", &SceneRecord::gt_offset},
    {"gt_flow", &SceneRecord::gt_flow},
    {"gt_occupancy", &SceneRecord::gt_occupancy},
}};

}  // namespace

void write_dataset(const std::vector<SceneRecord>& scenes,
                   const std::string& dir, uint64_t seed) {
  contract(!scenes.empty(), "write_dataset: no scenes");
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["seed"] = seed;
  const ScenarioConfig& cfg = scenes[0].config;
  manifest["config"] = {{"n_cameras", cfg.n_cameras},
                        {"image", {cfg.image_h, cfg.image_w}},
                        {"bev_cells", cfg.bev.cells},
                        {"bev_resolution", cfg.bev.resolution},
                        {"n_past", cfg.n_past},
                        {"n_future", cfg.n_future},
                        {"frame_dt", cfg.frame_dt},
                        {"n_vehicles", cfg.n_vehicles},
                        {"n_pedestrians", cfg.n_pedestrians}};
  json scene_list = json::array();
  for (size_t i = 0; i < scenes.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04zu", i);
    const std::string sdir = buf;
    fs::create_directories(fs::path(dir) / sdir);
    json blobs;
    for (const auto& spec : kBlobs) {
      const TensorF& t = scenes[i].*(spec.field);
      const std::string rel = sdir + "/" + spec.name + ".bin";
      write_blob(fs::path(dir) / rel, t);
      blobs[spec.name] = {{"path", rel}, {"shape", shape_json(t)}, {"dtype", "f32"}};
    }
    std::ofstream rig(fs::path(dir) / sdir / "rig.json");
    rig << rig_json(scenes[i].rigs).dump(2) << "\n";
    std::ofstream expert(fs::path(dir) / sdir / "expert.json");
    expert << expert_json(scenes[i]).dump(2) << "\n";
    scene_list.push_back({{"id", i}, {"dir", sdir}, {"blobs", blobs}});
  }
  manifest["scenes"] = scene_list;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  contract(out.good(), "manifest write failed");
}

std::vector<SceneRecord> read_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in.good()) throw FlaggedError("dataset manifest missing in " + dir);
  json manifest = json::parse(in);
  const int version = manifest.at("format_version").get<int>();
  if (version != kDatasetFormatVersion)
    throw FlaggedError("unsupported dataset format version " +
                       std::to_string(version) + " (expected " +
                       std::to_string(kDatasetFormatVersion) + ")");
  const json& cfg = manifest.at("config");
  std::vector<SceneRecord> scenes;
  for (const auto& entry : manifest.at("scenes")) {
    SceneRecord rec;
    rec.config.n_cameras = cfg.at("n_cameras").get<int64_t>();
    rec.config.image_h = cfg.at("image")[0].get<int64_t>();
    rec.config.image_w = cfg.at("image")[1].get<int64_t>();
    rec.config.bev.cells = cfg.at("bev_cells").get<int64_t>();
    rec.config.bev.resolution = cfg.at("bev_resolution").get<double>();
    rec.config.n_past = cfg.at("n_past").get<int64_t>();
    rec.config.n_future = cfg.at("n_future").get<int64_t>();
    rec.config.frame_dt = cfg.at("frame_dt").get<double>();
    rec.config.n_vehicles = cfg.at("n_vehicles").get<int64_t>();
    rec.config.n_pedestrians = cfg.at("n_pedestrians").get<int64_t>();
    const json& blobs = entry.at("blobs");
    for (const auto& spec : kBlobs) {
      const json& b = blobs.at(spec.name);
      contract(b.at("dtype").get<std::string>() == "f32",
               std::string("unsupported blob dtype for ") + spec.name);
      std::vector<int64_t> shape = b.at("shape").get<std::vector<int64_t>>();
      rec.*(spec.field) =
          read_blob(fs::path(dir) / b.at("path").get<std::string>(), shape);
    }
    const std::string sdir = entry.at("dir").get<std::string>();
    std::ifstream rig_in(fs::path(dir) / sdir / "rig.json");
    if (!rig_in.good()) throw FlaggedError("rig.json missing for " + sdir);
    rec.rigs = rig_from_json(json::parse(rig_in));
    std::ifstream exp_in(fs::path(dir) / sdir / "expert.json");
    if (!exp_in.good()) throw FlaggedError("expert.json missing for " + sdir);
    expert_from_json(json::parse(exp_in), rec);
    scenes.push_back(std::move(rec));
  }
  return scenes;
}

void generate_dataset(const ScenarioConfig& base, uint64_t seed,
                      int64_t n_scenes, const std::string& dir) {
  contract(n_scenes >= 1, "generate_dataset: need at least one scene");
  std::vector<SceneRecord> scenes;
  scenes.reserve(static_cast<size_t>(n_scenes));
  for (int64_t i = 0; i < n_scenes; ++i) {
    ScenarioConfig cfg = base;
    cfg.seed = Rng(seed).split("scene", static_cast<uint64_t>(i)).seed();
    scenes.push_back(build_scene(generate_scenario(cfg)));
  }
  write_dataset(scenes, dir, seed);
}

}  // namespace spikedrive
