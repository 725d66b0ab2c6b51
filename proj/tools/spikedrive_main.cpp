// spikedrive: desk-scale spiking driving stack.
//
// Subcommands:
//   gen-scenario  write a synthetic scenario dataset
//   train         run one training stage from a config file
//   eval          evaluate a checkpoint on a dataset
//   plan          plan on one scene and dump trajectories + overlay
//   energy        synaptic-operation energy estimate from layer profiles
//
// Exit codes: 0 success, 1 validation, 2 usage, 3 runtime. Failures emit a
// machine-readable error JSON on stderr.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "spikedrive/checkpoint.hpp"
#include "spikedrive/evaluate.hpp"
#include "spikedrive/image_io.hpp"
#include "spikedrive/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spikedrive;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ValidationError({"config: cannot open " + path});
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw ValidationError({"config: invalid JSON in " + path + ": " + e.what()});
  }
}

ScenarioConfig scenario_config_from(const json& j) {
  ScenarioConfig cfg;
  if (j.contains("image")) {
    cfg.image_h = j.at("image")[0].get<int64_t>();
    cfg.image_w = j.at("image")[1].get<int64_t>();
  }
  if (j.contains("bev_cells")) cfg.bev.cells = j.at("bev_cells").get<int64_t>();
  if (j.contains("bev_resolution"))
    cfg.bev.resolution = j.at("bev_resolution").get<double>();
  if (j.contains("n_cameras")) cfg.n_cameras = j.at("n_cameras").get<int64_t>();
  if (j.contains("n_vehicles")) cfg.n_vehicles = j.at("n_vehicles").get<int64_t>();
  if (j.contains("n_pedestrians"))
    cfg.n_pedestrians = j.at("n_pedestrians").get<int64_t>();
  if (j.contains("n_past")) cfg.n_past = j.at("n_past").get<int64_t>();
  if (j.contains("n_future")) cfg.n_future = j.at("n_future").get<int64_t>();
  if (j.contains("maneuver"))
    cfg.maneuver = command_from(j.at("maneuver").get<std::string>());
  cfg.validate();
  return cfg;
}

int cmd_gen_scenario(uint64_t seed, int64_t scenes, const std::string& out,
                     const std::string& config_path) {
  if (out.empty()) throw ValidationError({"--out: output directory required"});
  if (scenes < 1) throw ValidationError({"--scenes: must be >= 1"});
  ScenarioConfig cfg;
  if (!config_path.empty()) {
    json j = load_json(config_path);
    cfg = scenario_config_from(j.contains("scenario") ? j.at("scenario") : j);
  }
  generate_dataset(cfg, seed, scenes, out);
  std::cout << "wrote " << scenes << " scenes to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, int stage, const std::string& out,
              const std::string& checkpoint, bool seed_set, uint64_t seed) {
  if (config_path.empty()) throw ValidationError({"--config: required for train"});
  if (out.empty()) throw ValidationError({"--out: output directory required"});
  if (stage < 1 || stage > 3) throw ValidationError({"--stage: must be 1, 2 or 3"});
  TrainConfig cfg = TrainConfig::from_json(load_json(config_path));
  if (seed_set) cfg.seed = seed;
  cfg.validate();
  cfg.model.normalize();

  std::unique_ptr<DriveModel> model;
  if (stage == 1) {
    if (!checkpoint.empty())
      throw ValidationError({"--checkpoint: stage 1 starts from scratch"});
    model = std::make_unique<DriveModel>(cfg.model, cfg.seed);
  } else {
    if (checkpoint.empty())
      throw ValidationError({"--checkpoint: stage " + std::to_string(stage) +
                             " requires the stage " + std::to_string(stage - 1) +
                             " checkpoint"});
    CheckpointMeta meta = read_checkpoint_meta(checkpoint);
    if (meta.stage != stage - 1)
      throw ValidationError({"--checkpoint: expected a stage " +
                             std::to_string(stage - 1) + " checkpoint, found stage " +
                             std::to_string(meta.stage)});
    model = std::make_unique<DriveModel>(meta.config, cfg.seed);
    load_checkpoint_tensors(checkpoint, model->params());
  }

  auto train = read_dataset(cfg.train_dataset);
  std::vector<SceneRecord> val;
  if (!cfg.val_dataset.empty()) val = read_dataset(cfg.val_dataset);
  run_training_stage(*model, train, val, cfg, stage, out);
  std::cout << "stage " << stage << " complete; checkpoint at " << out
            << "/checkpoint\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& out) {
  if (config_path.empty()) throw ValidationError({"--config: required for eval"});
  if (checkpoint.empty()) throw ValidationError({"--checkpoint: required for eval"});
  if (out.empty()) throw ValidationError({"--out: output directory required"});
  json j = load_json(config_path);
  std::string dataset;
  if (j.contains("dataset")) dataset = j.at("dataset").get<std::string>();
  else if (j.contains("val_dataset")) dataset = j.at("val_dataset").get<std::string>();
  if (dataset.empty())
    throw ValidationError({"config.dataset: evaluation dataset path required"});

  CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  DriveModel model(meta.config, 0);
  load_checkpoint_tensors(checkpoint, model.params());
  auto scenes = read_dataset(dataset);

  fs::create_directories(out);
  Profiler profiler;
  EvalReport rep = evaluate_dataset(model, scenes, meta.stage, &profiler);
  {
    std::ofstream f(fs::path(out) / "report.json");
    f << rep.to_json().dump(2) << "\n";
  }
  {
    json profs = json::array();
    for (const auto& p : layer_profiles(profiler))
      profs.push_back({{"id", p.id},
                       {"kind", p.kind},
                       {"is_first", p.is_first},
                       {"flops", p.flops},
                       {"fr", p.fr},
                       {"T", p.timesteps}});
    std::ofstream f(fs::path(out) / "profiles.json");
    f << profs.dump(2) << "\n";
  }
  // head rasters of the first scene for inspection
  {
    FCtx ctx;
    auto per = model.forward_perception(ctx, scenes[0], /*decode=*/true);
    const auto& o = per.outputs.back();
    const int64_t G = model.config().bev.cells;
    auto prob_fg = [&](const FValue& head) {
      FValue p = slice_channels(softmax_channels(head), 1, 2);
      TensorF img({G, G});
      std::memcpy(img.data(), p->value.data(), sizeof(float) * G * G);
      return img;
    };
    write_pgm((fs::path(out) / "seg_vehicle.pgm").string(), prob_fg(o.seg));
    write_pgm((fs::path(out) / "seg_pedestrian.pgm").string(), prob_fg(o.ped));
    write_pgm((fs::path(out) / "map_drivable.pgm").string(),
              prob_fg(slice_channels(o.map, 0, 2)));
  }
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

int cmd_plan(const std::string& config_path, const std::string& checkpoint,
             const std::string& out) {
  if (config_path.empty()) throw ValidationError({"--config: required for plan"});
  if (checkpoint.empty()) throw ValidationError({"--checkpoint: required for plan"});
  if (out.empty()) throw ValidationError({"--out: output directory required"});
  json j = load_json(config_path);
  if (!j.contains("dataset"))
    throw ValidationError({"config.dataset: dataset path required"});
  const std::string dataset = j.at("dataset").get<std::string>();
  const int64_t scene_index = j.value("scene_index", int64_t(0));

  CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  DriveModel model(meta.config, 0);
  load_checkpoint_tensors(checkpoint, model.params());
  auto scenes = read_dataset(dataset);
  if (scene_index < 0 || scene_index >= static_cast<int64_t>(scenes.size()))
    throw ValidationError({"config.scene_index: out of range"});
  const SceneRecord& rec = scenes[static_cast<size_t>(scene_index)];

  FCtx ctx;
  auto per = model.forward_perception(ctx, rec, /*decode=*/false);
  auto pred = model.forward_prediction(ctx, per, LatentMode::Mean, Rng(0));
  auto plan = model.forward_planning(ctx, rec, pred.outputs, per.front_features);

  // cost table
  std::cout << "idx      f_o      f_v      f_r    total\n";
  for (size_t i = 0; i < plan.costs.size(); ++i) {
    const auto& c = plan.costs[i];
    std::printf("%3zu %8.3f %8.3f %8.3f %8.3f%s\n", i, c.f_o, c.f_v, c.f_r,
                c.total,
                static_cast<int64_t>(i) == plan.selection.index ? "  <- selected" : "");
  }
  if (plan.selection.fallback)
    std::cout << "(command filter eliminated all candidates; unfiltered argmin)\n";

  fs::create_directories(out);
  auto pose_list = [](const Trajectory& t) {
    json arr = json::array();
    for (size_t k = 0; k < t.poses.size(); ++k) {
      const auto& p = t.poses[k];
      arr.push_back({{"t", k * t.dt},
                     {"x", p.x},
                     {"y", p.y},
                     {"heading", p.heading},
                     {"speed", p.speed}});
    }
    return arr;
  };
  const Trajectory& best = plan.candidates[static_cast<size_t>(plan.selection.index)];
  json out_json = {
      {"command", to_string(rec.command)},
      {"target", {rec.target.x, rec.target.y}},
      {"selected_index", plan.selection.index},
      {"filter_fallback", plan.selection.fallback},
      {"selected", pose_list(best)},
      {"refined", pose_list(plan.refined)},
      {"expert", pose_list(rec.expert)},
      {"costs", json::array()},
  };
  for (const auto& c : plan.costs)
    out_json["costs"].push_back(
        {{"f_o", c.f_o}, {"f_v", c.f_v}, {"f_r", c.f_r}, {"total", c.total}});
  {
    std::ofstream f(fs::path(out) / "plan.json");
    f << out_json.dump(2) << "\n";
  }

  // BEV overlay: occupancy in red, candidates gray, selected green, refined
  // cyan-ish, expert white
  {
    const int64_t G = model.config().bev.cells;
    TensorF img({3, G, G});
    for (int64_t q = 0; q < G * G; ++q) {
      const float occ = plan.occupancy.occupancy[q];
      img[q] = 0.2f + 0.8f * occ;
      img[G * G + q] = 0.2f;
      img[2 * G * G + q] = 0.2f;
    }
    auto draw = [&](const Trajectory& t, float r, float g, float b) {
      for (const auto& p : t.poses) {
        int64_t i, jj;
        if (model.config().bev.cell_of(p.x, p.y, i, jj)) {
          img[i * G + jj] = r;
          img[G * G + i * G + jj] = g;
          img[2 * G * G + i * G + jj] = b;
        }
      }
    };
    for (const auto& t : plan.candidates) draw(t, 0.45f, 0.45f, 0.45f);
    draw(best, 0.1f, 0.9f, 0.1f);
    draw(plan.refined, 0.1f, 0.9f, 0.9f);
    draw(rec.expert, 1.0f, 1.0f, 1.0f);
    write_ppm((fs::path(out) / "overlay.ppm").string(), img);
  }
  return 0;
}

int cmd_energy(const std::string& profiles_path, const std::string& out) {
  if (profiles_path.empty())
    throw ValidationError({"--profiles: layer profile JSON required"});
  json j = load_json(profiles_path);
  if (!j.is_array()) throw ValidationError({"profiles: expected a JSON array"});
  std::vector<LayerProfile> profiles;
  try {
    for (const auto& e : j) {
      LayerProfile p;
      p.id = e.at("id").get<std::string>();
      p.kind = e.at("kind").get<std::string>();
      p.is_first = e.at("is_first").get<bool>();
      p.flops = e.at("flops").get<double>();
      p.fr = e.at("fr").get<double>();
      p.timesteps = e.at("T").get<int64_t>();
      p.validate();
      profiles.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError({std::string("profiles: ") + e.what()});
  } catch (const ContractError& e) {
    throw ValidationError({std::string("profiles: ") + e.what()});
  }
  EnergyModel model;
  EnergyReport snn = estimate_energy(profiles, model, EnergyKind::Snn);
  EnergyReport ann = estimate_energy(profiles, model, EnergyKind::Ann);
  std::cout << "layer energies (pJ):\n";
  for (const auto& row : snn.layers)
    std::printf("  %-24s %14.3f\n", row.id.c_str(), row.pj);
  std::printf("total: %.3f pJ = %.9f mJ (snn)\n", snn.total_pj, snn.total_mj);
  std::printf("ann equivalent: %.3f pJ = %.9f mJ, ratio %.2fx\n", ann.total_pj,
              ann.total_mj, energy_ratio(ann.total_pj, snn.total_pj));
  if (!out.empty()) {
    fs::create_directories(out);
    json rows = json::array();
    for (const auto& row : snn.layers) rows.push_back({{"id", row.id}, {"pj", row.pj}});
    json rep = {{"layers", rows},
                {"total_pj", snn.total_pj},
                {"total_mj", snn.total_mj},
                {"ann_total_pj", ann.total_pj},
                {"ann_total_mj", ann.total_mj},
                {"ann_to_snn_ratio", energy_ratio(ann.total_pj, snn.total_pj)}};
    std::ofstream f(fs::path(out) / "energy.json");
    f << rep.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_threads();
  CLI::App app{"spikedrive: spiking perception-prediction-planning stack"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, profiles_path;
  uint64_t seed = 42;
  bool seed_set = false;
  int stage = 1;
  int64_t scenes = 16;
  int verbosity = 0;

  app.add_flag("--verbose", verbosity, "increase log verbosity");

  auto* gen = app.add_subcommand("gen-scenario", "write a synthetic dataset");
  gen->add_option("--seed", seed, "generator seed")->each([&](const std::string&) {
    seed_set = true;
  });
  gen->add_option("--scenes", scenes, "number of scenes");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--config", config_path, "scenario config JSON");

  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--config", config_path, "training config JSON");
  train->add_option("--stage", stage, "training stage (1-3)");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--checkpoint", checkpoint, "previous stage checkpoint");
  train->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_set = true;
  });

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--config", config_path, "eval config JSON (dataset path)");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory");
  eval_cmd->add_option("--out", out_dir, "output directory");

  auto* plan_cmd = app.add_subcommand("plan", "plan on one scene");
  plan_cmd->add_option("--config", config_path, "plan config JSON");
  plan_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory");
  plan_cmd->add_option("--out", out_dir, "output directory");

  auto* energy_cmd = app.add_subcommand("energy", "energy estimate from profiles");
  energy_cmd->add_option("--profiles", profiles_path, "layer profile JSON");
  energy_cmd->add_option("--out", out_dir, "optional report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_scenario(seed, scenes, out_dir, config_path);
    if (train->parsed())
      return cmd_train(config_path, stage, out_dir, checkpoint, seed_set, seed);
    if (eval_cmd->parsed()) return cmd_eval(config_path, checkpoint, out_dir);
    if (plan_cmd->parsed()) return cmd_plan(config_path, checkpoint, out_dir);
    if (energy_cmd->parsed()) return cmd_energy(profiles_path, out_dir);
  } catch (const ValidationError& e) {
    json err = {{"error", "validation"}, {"issues", e.issues}};
    std::cerr << err.dump(2) << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err = {{"error", "runtime"}, {"message", e.what()}};
    std::cerr << err.dump(2) << "\n";
    return 3;
  }
  return 2;
}
