#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "spikedrive/training.hpp"

using namespace spikedrive;
namespace fs = std::filesystem;

namespace {

ScenarioConfig tiny_scenario() {
  ScenarioConfig cfg;
  cfg.n_cameras = 4;
  cfg.image_h = 16;
  cfg.image_w = 24;
  cfg.bev = BevSpec{16, 0.75};
  cfg.n_vehicles = 2;
  cfg.n_pedestrians = 1;
  cfg.n_future = 2;
  return cfg;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.encoder.channels = {4, 6, 8};
  cfg.encoder.pool_after = {1, 2, 3};
  cfg.encoder.feat_channels = 6;
  cfg.encoder.depth_bins.count = 4;
  cfg.encoder.depth_bins.max_depth = 7.0;
  cfg.decoder.stage_channels = {4, 6, 8};
  cfg.decoder.head_channels = 8;
  cfg.prediction.latent_len = 4;
  cfg.encoder_strategy = TimestepStrategy::sr(2);
  cfg.bev = BevSpec{16, 0.75};
  cfg.n_past = 3;
  cfg.n_future = 2;
  cfg.normalize();
  return cfg;
}

std::vector<SceneRecord> tiny_dataset(uint64_t seed, int64_t n) {
  std::vector<SceneRecord> out;
  for (int64_t i = 0; i < n; ++i) {
    ScenarioConfig cfg = tiny_scenario();
    cfg.seed = Rng(seed).split("scene", static_cast<uint64_t>(i)).seed();
    out.push_back(build_scene(generate_scenario(cfg)));
  }
  return out;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.train_dataset = "in-memory";
  cfg.batch_size = 2;
  cfg.eval_every = 0;
  return cfg;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("stage gating: stage 1 leaves prediction and planner parameters cold") {
  auto scenes = tiny_dataset(11, 1);
  auto cfg = tiny_train_config();
  DriveModel model(cfg.model, 3);
  FCtx ctx;
  ctx.training = true;
  auto sl = scene_loss(model, scenes[0], 1, cfg, Rng(5), ctx);
  CHECK(std::isfinite(sl.report.l_total));
  backward(sl.total);

  bool encoder_grad = false;
  for (auto& p : model.params().params()) {
    const bool frozen_family = p.name.rfind("pred.", 0) == 0 ||
                               p.name.rfind("latent.", 0) == 0 ||
                               p.name.rfind("sgru.", 0) == 0 ||
                               p.name.rfind("readout.", 0) == 0 ||
                               p.name.rfind("planner.", 0) == 0 ||
                               p.name.rfind("loss.", 0) == 0;
    double norm = 0;
    if (p.value->has_grad())
      for (int64_t i = 0; i < p.value->grad.size(); ++i)
        norm += std::abs(static_cast<double>(p.value->grad[i]));
    if (frozen_family) {
      CHECK(norm == 0.0);
    } else if (p.name.rfind("encoder.l0", 0) == 0) {
      encoder_grad = encoder_grad || norm > 0.0;
    }
  }
  CHECK(encoder_grad);
}

TEST_CASE("every decoder head receives gradient for a training example") {
  auto scenes = tiny_dataset(13, 1);
  auto cfg = tiny_train_config();
  DriveModel model(cfg.model, 3);
  FCtx ctx;
  ctx.training = true;
  auto sl = scene_loss(model, scenes[0], 1, cfg, Rng(5), ctx);
  backward(sl.total);
  for (const char* head : {"decoder.head_seg.w", "decoder.head_ped.w",
                           "decoder.head_map.w", "decoder.head_inst.w"}) {
    auto p = model.params().find(head);
    REQUIRE(p->has_grad());
    double norm = 0;
    for (int64_t i = 0; i < p->grad.size(); ++i)
      norm += std::abs(static_cast<double>(p->grad[i]));
    CHECK(norm > 0.0);
  }
}

TEST_CASE("stage 2 and 3 losses build and stay finite") {
  auto scenes = tiny_dataset(17, 1);
  auto cfg = tiny_train_config();
  DriveModel model(cfg.model, 3);
  for (int stage : {2, 3}) {
    FCtx ctx;
    ctx.training = true;
    auto sl = scene_loss(model, scenes[0], stage, cfg, Rng(7), ctx);
    CHECK(std::isfinite(sl.report.l_total));
    backward(sl.total);
    model.params().zero_grads();
  }
}

TEST_CASE("training stage runs, logs, checkpoints, and is deterministic") {
  auto train = tiny_dataset(19, 3);
  auto cfg = tiny_train_config();
  cfg.stages[0].epochs = 2;
  cfg.stages[0].lr = 1e-3;

  auto run_once = [&](const fs::path& dir) {
    fs::remove_all(dir);
    DriveModel model(cfg.model, cfg.seed);
    auto result = run_training_stage(model, train, {}, cfg, 1, dir.string());
    REQUIRE(result.logs.size() == 2);
    return result;
  };
  const fs::path d1 = fs::temp_directory_path() / "sdtest_tr1";
  const fs::path d2 = fs::temp_directory_path() / "sdtest_tr2";
  auto r1 = run_once(d1);
  auto r2 = run_once(d2);
  CHECK(r1.logs[0].loss.l_total == r2.logs[0].loss.l_total);
  CHECK(r1.logs[1].loss.l_total == r2.logs[1].loss.l_total);

  // byte-identical checkpoints and logs
  CHECK(file_bytes(d1 / "metrics.jsonl") == file_bytes(d2 / "metrics.jsonl"));
  CHECK(file_bytes(d1 / "checkpoint" / "manifest.json") ==
        file_bytes(d2 / "checkpoint" / "manifest.json"));
  CHECK(file_bytes(d1 / "checkpoint" / "tensors" / "encoder.l0.conv.w.bin") ==
        file_bytes(d2 / "checkpoint" / "tensors" / "encoder.l0.conv.w.bin"));

  CheckpointMeta meta = read_checkpoint_meta((d1 / "checkpoint").string());
  CHECK(meta.stage == 1);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("stage-1 loss strictly decreases over the first five epochs") {
  auto train = tiny_dataset(23, 4);
  auto cfg = tiny_train_config();
  cfg.stages[0].epochs = 5;
  cfg.stages[0].lr = 1e-3;
  DriveModel model(cfg.model, cfg.seed);
  const fs::path dir = fs::temp_directory_path() / "sdtest_tr3";
  fs::remove_all(dir);
  auto result = run_training_stage(model, train, {}, cfg, 1, dir.string());
  REQUIRE(result.logs.size() == 5);
  for (size_t e = 1; e < result.logs.size(); ++e)
    CHECK(result.logs[e].loss.l_total < result.logs[e - 1].loss.l_total);
  fs::remove_all(dir);
}

TEST_CASE("train config validation lists every offending field") {
  TrainConfig cfg;
  cfg.train_dataset = "";
  cfg.k_frac = 0.0;
  cfg.batch_size = 0;
  try {
    cfg.validate();
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.issues.size() == 3);
  }
}
