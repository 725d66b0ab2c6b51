#pragma once

#include <array>

#include "spikedrive/planning.hpp"

namespace spikedrive {

// |intersection| / |union| of two binary masks; two empty masks count as a
// perfect match.
double segmentation_iou(const TensorF& pred, const TensorF& gt);

// Unique instance matching at IoU > 0.5.
struct MatchResult {
  struct Pair {
    int32_t pred_id;
    int32_t gt_id;
    double iou;
  };
  std::vector<Pair> tp;
  std::vector<int32_t> fp;  // unmatched prediction ids
  std::vector<int32_t> fn;  // unmatched ground-truth ids
};

MatchResult match_instances(const Tensor<int32_t>& pred_ids,
                            const Tensor<int32_t>& gt_ids);

struct PanopticReport {
  double pq = 0, sq = 0, rq = 0;
  double iou = 0;       // semantic IoU of the union masks
  bool empty_scene = false;  // no instances on either side
};

// PQ = sum_TP IoU / (|TP| + |FP|/2 + |FN|/2); RQ drops the IoU weighting;
// SQ = sum_TP IoU / |TP| (0 when |TP| = 0).
PanopticReport panoptic_metrics(const Tensor<int32_t>& pred_ids,
                                const Tensor<int32_t>& gt_ids);

struct PlanReport {
  std::array<double, 3> l2 = {0, 0, 0};  // meters at 1s, 2s, 3s
  double collision_rate = 0;             // percent of scenes
};

// Euclidean planned-vs-expert errors at the 1/2/3 s horizons (dt = 0.5 s).
std::array<double, 3> l2_horizon_errors(const Trajectory& planned,
                                        const Trajectory& expert);

// True when the ego footprint along the trajectory overlaps an occupied cell
// at the matching future step.
bool trajectory_collides(const Trajectory& traj, const TensorF& occupancy_gt,
                         const PlannerParams& params, const BevSpec& bev,
                         double threshold = 0.5);

// Instance decoding from the BEV heads: centerness peaks become instance
// centers, foreground cells follow their predicted offsets to the nearest
// center.
Tensor<int32_t> extract_instances(const TensorF& centerness,
                                  const TensorF& offset_x,
                                  const TensorF& offset_y,
                                  const TensorF& foreground,
                                  double center_threshold = 0.3,
                                  double assign_radius = 4.0);

}  // namespace spikedrive
