#pragma once

#include "spikedrive/energy.hpp"
#include "spikedrive/metrics.hpp"
#include "spikedrive/model.hpp"

namespace spikedrive {

struct EvalReport {
  // perception (past frames, own ego frame)
  double iou_vehicle = 0, iou_pedestrian = 0, iou_drivable = 0, iou_lane = 0;
  double iou_avg = 0;
  // prediction (future frames, present ego frame)
  double future_iou = 0;
  double pq = 0, sq = 0, rq = 0;
  int64_t panoptic_scenes = 0;       // non-empty (scene, frame) pairs
  int64_t panoptic_empty = 0;        // excluded empty pairs
  // planning
  PlanReport plan_refined;
  PlanReport plan_unrefined;
  int64_t scenes = 0;
  int stage = 1;

  nlohmann::ordered_json to_json() const;
};

// Runs the model over a dataset in eval mode (running BN statistics, mean
// latents) and aggregates metrics. Stages gate which subsystems run. When a
// profiler is supplied the first scene's forward pass is profiled.
EvalReport evaluate_dataset(DriveModel& model,
                            const std::vector<SceneRecord>& scenes, int stage,
                            Profiler* profiler = nullptr);

// Converts accumulated profiler entries into energy-model layer profiles.
std::vector<LayerProfile> layer_profiles(const Profiler& profiler);

}  // namespace spikedrive
