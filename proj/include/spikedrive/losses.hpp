#pragma once

#include "spikedrive/perception.hpp"
#include "spikedrive/planning.hpp"

namespace spikedrive {

// Per-pixel cross entropy, averaged over the hardest k_frac fraction of
// pixels. k_frac = 1 is the plain mean.
template <typename T>
Value<T> topk_cross_entropy(const Value<T>& logits, const Tensor<int32_t>& labels,
                            double k_frac) {
  contract(logits->value.size() > 0, "topk_cross_entropy: empty raster");
  return topk_mean(ce_map(logits, labels), k_frac);
}

// Constant ground truth for one frame's perception losses.
struct FrameTargets {
  Tensor<int32_t> vehicle;   // [G*G] class ids {0,1}
  Tensor<int32_t> pedestrian;
  Tensor<int32_t> drivable;
  Tensor<int32_t> lane;
  TensorF centerness;        // [1,1,G,G]
  TensorF offset;            // [1,2,G,G]
  TensorF flow;              // [1,2,G,G]
  TensorF fg_weight;         // [1,2,G,G] instance mask for offset/flow terms
};

template <typename T>
struct PerceptionLossTerms {
  Value<T> seg, ped, map, centerness, offset, flow;
  Value<T> total;
};

// L_per = topk-CE(seg) + topk-CE(ped) + CE(map) + l2(centerness) + l1(offsets)
//       + l1(flow); offsets and flows are weighted by the instance mask.
template <typename T>
PerceptionLossTerms<T> perception_loss(const BevOutputs<T>& out,
                                       const FrameTargets& gt, double k_frac) {
  contract(out.seg && out.ped && out.map && out.inst,
           "perception_loss: missing head output");
  PerceptionLossTerms<T> terms;
  terms.seg = topk_cross_entropy(out.seg, gt.vehicle, k_frac);
  terms.ped = topk_cross_entropy(out.ped, gt.pedestrian, k_frac);
  Value<T> map_drivable =
      mean_all(ce_map(slice_channels(out.map, 0, 2), gt.drivable));
  Value<T> map_lane = mean_all(ce_map(slice_channels(out.map, 2, 4), gt.lane));
  terms.map = add(map_drivable, map_lane);
  terms.centerness =
      mse_loss(slice_channels(out.inst, 0, 1), gt.centerness.cast<T>());
  const Tensor<T> w = gt.fg_weight.cast<T>();
  terms.offset = l1_loss(slice_channels(out.inst, 1, 3), gt.offset.cast<T>(), &w);
  terms.flow = l1_loss(slice_channels(out.inst, 3, 5), gt.flow.cast<T>(), &w);
  terms.total = add(add(add(terms.seg, terms.ped), add(terms.map, terms.centerness)),
                    add(terms.offset, terms.flow));
  return terms;
}

// sum_{j=1..n} gamma^j * loss_j / sum_j gamma^j; identical per-step losses
// come back unchanged for any gamma.
template <typename T>
Value<T> discounted_mean(const std::vector<Value<T>>& step_losses, double gamma) {
  contract(!step_losses.empty(), "discounted_mean: no future steps");
  contract(gamma > 0.0 && gamma <= 1.0, "discounted_mean: gamma must be in (0,1]");
  Value<T> acc;
  double norm = 0;
  for (size_t j = 0; j < step_losses.size(); ++j) {
    const double w = std::pow(gamma, static_cast<double>(j + 1));
    Value<T> term = scale(step_losses[j], static_cast<T>(w));
    acc = acc ? add(acc, term) : term;
    norm += w;
  }
  return scale(acc, static_cast<T>(1.0 / norm));
}

// Exponentially discounted top-k cross entropy over the predicted future.
template <typename T>
Value<T> prediction_loss(const std::vector<BevOutputs<T>>& future,
                         const std::vector<FrameTargets>& gt, double gamma,
                         double k_frac) {
  contract(future.size() == gt.size(), "prediction_loss: target count mismatch");
  std::vector<Value<T>> steps;
  for (size_t j = 0; j < future.size(); ++j)
    steps.push_back(scale(
        add(topk_cross_entropy(future[j].seg, gt[j].vehicle, k_frac),
            topk_cross_entropy(future[j].ped, gt[j].pedestrian, k_frac)),
        T(0.5)));
  return discounted_mean(steps, gamma);
}

// Max-margin ranking against the expert plus l1 deviation of the refined
// trajectory. margin(tau) grows with the average pose distance to the expert,
// demanding larger cost gaps from harder negatives.
template <typename T>
struct PlanningLossTerms {
  Value<T> hinge;
  Value<T> l1;
  Value<T> total;
};

template <typename T>
PlanningLossTerms<T> planning_loss(const Value<T>& expert_cost,
                                   const std::vector<Value<T>>& candidate_costs,
                                   const std::vector<double>& margins,
                                   const std::vector<Value<T>>& refined_xy,
                                   const Trajectory& expert) {
  contract(!candidate_costs.empty(), "planning_loss: empty candidate set");
  contract(candidate_costs.size() == margins.size(),
           "planning_loss: margin count mismatch");
  Value<T> hinge_acc;
  for (size_t i = 0; i < candidate_costs.size(); ++i) {
    Value<T> gap = add(sub(expert_cost, candidate_costs[i]),
                       constant(Tensor<T>::scalar(static_cast<T>(margins[i]))));
    Value<T> h = relu(gap);
    hinge_acc = hinge_acc ? add(hinge_acc, h) : h;
  }
  PlanningLossTerms<T> terms;
  terms.hinge = scale(hinge_acc, T(1) / static_cast<T>(candidate_costs.size()));

  contract(refined_xy.size() + 1 == expert.poses.size(),
           "planning_loss: refined trajectory misaligned with the expert");
  Value<T> l1_acc;
  for (size_t k = 0; k < refined_xy.size(); ++k) {
    Tensor<T> tgt({1, 2});
    tgt[0] = static_cast<T>(expert.poses[k + 1].x);
    tgt[1] = static_cast<T>(expert.poses[k + 1].y);
    Value<T> term = l1_loss(refined_xy[k], tgt);
    l1_acc = l1_acc ? add(l1_acc, term) : term;
  }
  terms.l1 = scale(l1_acc, T(1) / static_cast<T>(refined_xy.size()));
  terms.total = add(terms.hinge, terms.l1);
  return terms;
}

// Average pose distance between a candidate and the expert (the hinge margin).
inline double trajectory_margin(const Trajectory& tau, const Trajectory& expert) {
  const size_t n = std::min(tau.poses.size(), expert.poses.size());
  contract(n > 0, "trajectory_margin: empty trajectories");
  double acc = 0;
  for (size_t k = 0; k < n; ++k) {
    const double dx = tau.poses[k].x - expert.poses[k].x;
    const double dy = tau.poses[k].y - expert.poses[k].y;
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc / static_cast<double>(n);
}

// Learnable composite weighting: alpha = exp(-s_pre), beta = exp(-s_pla), with
// the additive regularizer s_pre + s_pla keeping the weights from collapsing.
// Stage gating: stage 1 trains L_per alone; stage 2 adds the prediction term;
// stage 3 adds planning.
template <typename T>
Value<T> composite_loss(const Value<T>& l_per, const Value<T>& l_pre,
                        const Value<T>& l_pla, const Value<T>& s_pre,
                        const Value<T>& s_pla, int stage) {
  contract(stage >= 1 && stage <= 3, "composite_loss: stage must be 1..3");
  auto check_finite = [](const Value<T>& v, const char* what) {
    if (!v || !std::isfinite(static_cast<double>(scalar_value(v))))
      throw FlaggedError(std::string("composite_loss: non-finite ") + what);
  };
  check_finite(l_per, "perception loss");
  Value<T> total = l_per;
  if (stage >= 2) {
    check_finite(l_pre, "prediction loss");
    total = add(total, add(mul(exp_op(scale(s_pre, T(-1))), l_pre), s_pre));
  }
  if (stage >= 3) {
    check_finite(l_pla, "planning loss");
    total = add(total, add(mul(exp_op(scale(s_pla, T(-1))), l_pla), s_pla));
  }
  return total;
}

}  // namespace spikedrive
