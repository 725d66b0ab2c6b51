#include "spikedrive/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace spikedrive {

double segmentation_iou(const TensorF& pred, const TensorF& gt) {
  contract(pred.same_shape(gt), "segmentation_iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0.0f, g = gt[i] != 0.0f;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // both empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::map<int32_t, int64_t> instance_areas(const Tensor<int32_t>& ids) {
  std::map<int32_t, int64_t> areas;
  for (int64_t i = 0; i < ids.size(); ++i)
    if (ids[i] > 0) areas[ids[i]]++;
  return areas;
}

}  // namespace

MatchResult match_instances(const Tensor<int32_t>& pred_ids,
                            const Tensor<int32_t>& gt_ids) {
  contract(pred_ids.same_shape(gt_ids), "match_instances: shape mismatch");
  const auto pred_areas = instance_areas(pred_ids);
  const auto gt_areas = instance_areas(gt_ids);

  // pairwise overlaps
  std::map<std::pair<int32_t, int32_t>, int64_t> overlap;
  for (int64_t i = 0; i < pred_ids.size(); ++i)
    if (pred_ids[i] > 0 && gt_ids[i] > 0) overlap[{pred_ids[i], gt_ids[i]}]++;

  MatchResult res;
  std::set<int32_t> matched_pred, matched_gt;
  for (const auto& [key, inter] : overlap) {
    const auto [p, g] = key;
    const int64_t uni = pred_areas.at(p) + gt_areas.at(g) - inter;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    // IoU > 0.5 makes the match unique on both sides by construction
    if (iou > 0.5) {
      res.tp.push_back({p, g, iou});
      matched_pred.insert(p);
      matched_gt.insert(g);
    }
  }
  for (const auto& [p, a] : pred_areas)
    if (!matched_pred.count(p)) res.fp.push_back(p);
  for (const auto& [g, a] : gt_areas)
    if (!matched_gt.count(g)) res.fn.push_back(g);
  return res;
}

PanopticReport panoptic_metrics(const Tensor<int32_t>& pred_ids,
                                const Tensor<int32_t>& gt_ids) {
  const MatchResult m = match_instances(pred_ids, gt_ids);
  PanopticReport rep;
  const double ntp = static_cast<double>(m.tp.size());
  const double denom =
      ntp + 0.5 * static_cast<double>(m.fp.size()) + 0.5 * static_cast<double>(m.fn.size());
  double iou_sum = 0;
  for (const auto& p : m.tp) iou_sum += p.iou;
  if (denom == 0.0) {
    rep.empty_scene = true;
    rep.pq = rep.sq = rep.rq = 0.0;
  } else {
    rep.pq = iou_sum / denom;
    rep.rq = ntp / denom;
    rep.sq = ntp > 0 ? iou_sum / ntp : 0.0;
  }
  // semantic IoU of the union masks
  TensorF pm(pred_ids.shape()), gm(gt_ids.shape());
  for (int64_t i = 0; i < pred_ids.size(); ++i) {
    pm[i] = pred_ids[i] > 0 ? 1.0f : 0.0f;
    gm[i] = gt_ids[i] > 0 ? 1.0f : 0.0f;
  }
  rep.iou = segmentation_iou(pm, gm);
  return rep;
}

std::array<double, 3> l2_horizon_errors(const Trajectory& planned,
                                        const Trajectory& expert) {
  std::array<double, 3> out{0, 0, 0};
  for (int h = 1; h <= 3; ++h) {
    const size_t idx = static_cast<size_t>(std::llround(h / planned.dt));
    contract(idx < planned.poses.size() && idx < expert.poses.size(),
             "plan horizon exceeds trajectory length");
    const double dx = planned.poses[idx].x - expert.poses[idx].x;
    const double dy = planned.poses[idx].y - expert.poses[idx].y;
    out[h - 1] = std::sqrt(dx * dx + dy * dy);
  }
  return out;
}

bool trajectory_collides(const Trajectory& traj, const TensorF& occupancy_gt,
                         const PlannerParams& params, const BevSpec& bev,
                         double threshold) {
  contract(occupancy_gt.rank() == 3, "trajectory_collides: bad occupancy shape");
  const int64_t steps = occupancy_gt.dim(0);
  const int64_t grid = bev.cells * bev.cells;
  PlannerParams base = params;
  base.speed_margin = 0.0;  // collision uses the unpadded body
  for (size_t k = 1; k < traj.poses.size(); ++k) {
    const int64_t step = std::min<int64_t>(static_cast<int64_t>(k) - 1, steps - 1);
    for (int64_t cell : footprint_cells(traj.poses[k].pose(), 0.0, base, bev))
      if (occupancy_gt[step * grid + cell] >= threshold) return true;
  }
  return false;
}

Tensor<int32_t> extract_instances(const TensorF& centerness,
                                  const TensorF& offset_x,
                                  const TensorF& offset_y,
                                  const TensorF& foreground,
                                  double center_threshold, double assign_radius) {
  contract(centerness.rank() == 2, "extract_instances expects [G,G] rasters");
  const int64_t G = centerness.dim(0);
  // centers: local maxima of centerness above the threshold (3x3 window)
  std::vector<std::pair<int64_t, int64_t>> centers;
  for (int64_t i = 0; i < G; ++i)
    for (int64_t j = 0; j < G; ++j) {
      const float v = centerness[i * G + j];
      if (v < center_threshold) continue;
      bool is_max = true;
      for (int64_t di = -1; di <= 1 && is_max; ++di)
        for (int64_t dj = -1; dj <= 1; ++dj) {
          const int64_t ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= G || nj >= G) continue;
          const float nv = centerness[ni * G + nj];
          if (nv > v || (nv == v && (ni * G + nj) < (i * G + j))) {
            is_max = false;
            break;
          }
        }
      if (is_max) centers.push_back({i, j});
    }

  Tensor<int32_t> ids({G, G});
  if (centers.empty()) return ids;
  for (int64_t i = 0; i < G; ++i)
    for (int64_t j = 0; j < G; ++j) {
      if (foreground[i * G + j] < 0.5f) continue;
      const double ci = i + offset_x[i * G + j];
      const double cj = j + offset_y[i * G + j];
      int32_t best = -1;
      double best_d = assign_radius * assign_radius;
      for (size_t c = 0; c < centers.size(); ++c) {
        const double di = ci - centers[c].first, dj = cj - centers[c].second;
        const double d = di * di + dj * dj;
        if (d < best_d) {
          best_d = d;
          best = static_cast<int32_t>(c);
        }
      }
      if (best >= 0) ids[i * G + j] = best + 1;
    }
  return ids;
}

}  // namespace spikedrive
