#pragma once

#include "spikedrive/adam.hpp"
#include "spikedrive/checkpoint.hpp"
#include "spikedrive/dataset.hpp"
#include "spikedrive/metrics.hpp"

namespace spikedrive {

struct StageConfig {
  int stage = 1;
  double lr = 1e-3;
  int64_t epochs = 20;
};

struct TrainConfig {
  uint64_t seed = 42;
  std::string train_dataset;
  std::string val_dataset;
  ModelConfig model;
  double k_frac = 0.25;
  double gamma = 0.95;
  int64_t batch_size = 4;
  double grad_clip = 5.0;
  bool freeze_perception = false;
  int64_t eval_every = 1;  // epochs between val metric passes; 0 = final only
  // defaults: stage 1 lr 1e-3 / 20 epochs, stage 2 10 epochs, stages 2-3 lr 2e-4
  std::array<StageConfig, 3> stages = {{{1, 1e-3, 20}, {2, 2e-4, 10}, {3, 2e-4, 10}}};

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
};

// Ground-truth views for one frame of a scene.
FrameTargets frame_targets(const SceneRecord& rec, int64_t frame);

struct LossReport {
  double l_per = 0, l_pre = 0, l_pla = 0, l_total = 0;
  double seg = 0, ped = 0, map = 0, centerness = 0, offset = 0, flow = 0;
  double hinge = 0, l1 = 0;
};

struct EpochLog {
  int stage = 0;
  int64_t epoch = 0;
  LossReport loss;
  nlohmann::ordered_json metrics;  // optional eval metrics
};

struct StageResult {
  std::vector<EpochLog> logs;
};

// Builds the per-scene loss graph for one stage. Exposed for tests.
struct SceneLoss {
  FValue total;
  LossReport report;
};
SceneLoss scene_loss(DriveModel& model, const SceneRecord& rec, int stage,
                     const TrainConfig& cfg, const Rng& rng, FCtx& ctx);

// Seeded, deterministic epoch loop with Adam updates and gradient clipping.
// Appends one JSON object per epoch to <out_dir>/metrics.jsonl and writes the
// final checkpoint to <out_dir>/checkpoint.
StageResult run_training_stage(DriveModel& model,
                               const std::vector<SceneRecord>& train,
                               const std::vector<SceneRecord>& val,
                               const TrainConfig& cfg, int stage,
                               const std::string& out_dir);

}  // namespace spikedrive
