#include "spikedrive/evaluate.hpp"

namespace spikedrive {

using json = nlohmann::ordered_json;

json EvalReport::to_json() const {
  json j;
  j["scenes"] = scenes;
  j["stage"] = stage;
  j["perception"] = {{"iou_vehicle", iou_vehicle},
                     {"iou_pedestrian", iou_pedestrian},
                     {"iou_drivable", iou_drivable},
                     {"iou_lane", iou_lane},
                     {"iou_avg", iou_avg}};
  if (stage >= 2)
    j["prediction"] = {{"future_iou", future_iou},
                       {"pq", pq},
                       {"sq", sq},
                       {"rq", rq},
                       {"panoptic_pairs", panoptic_scenes},
                       {"panoptic_empty_excluded", panoptic_empty}};
  if (stage >= 3) {
    j["planning"] = {{"refined",
                      {{"l2_1s", plan_refined.l2[0]},
                       {"l2_2s", plan_refined.l2[1]},
                       {"l2_3s", plan_refined.l2[2]},
                       {"collision_pct", plan_refined.collision_rate}}},
                     {"unrefined",
                      {{"l2_1s", plan_unrefined.l2[0]},
                       {"l2_2s", plan_unrefined.l2[1]},
                       {"l2_3s", plan_unrefined.l2[2]},
                       {"collision_pct", plan_unrefined.collision_rate}}}};
  }
  return j;
}

namespace {

TensorF channel_argmax_fg(const FValue& head) {
  // foreground mask from a 2-class head: argmax == 1
  const auto& s = head->value.shape();
  const int64_t gg = s[2] * s[3];
  TensorF mask({s[2], s[3]});
  for (int64_t q = 0; q < gg; ++q)
    mask[q] = head->value[gg + q] > head->value[q] ? 1.0f : 0.0f;
  return mask;
}

TensorF gt_slice(const TensorF& src, int64_t frame, int64_t G) {
  TensorF t({G, G});
  std::memcpy(t.data(), src.data() + frame * G * G, sizeof(float) * G * G);
  return t;
}

}  // namespace

std::vector<LayerProfile> layer_profiles(const Profiler& profiler) {
  std::vector<LayerProfile> out;
  for (const auto& e : profiler.entries()) {
    LayerProfile p;
    p.id = e.id;
    p.kind = e.kind;
    p.is_first = e.is_first;
    p.flops = e.macs_per_sample;
    p.fr = e.calls > 0 ? e.fr_sum / static_cast<double>(e.calls) : 0.0;
    p.timesteps = std::max<int64_t>(1, e.calls);
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

EvalReport evaluate_dataset(DriveModel& model,
                            const std::vector<SceneRecord>& scenes, int stage,
                            Profiler* profiler) {
  contract(!scenes.empty(), "evaluate_dataset: no scenes");
  EvalReport rep;
  rep.stage = stage;
  rep.scenes = static_cast<int64_t>(scenes.size());
  const int64_t P = model.config().n_past;
  const int64_t G = model.config().bev.cells;

  double pq_sum = 0, sq_sum = 0, rq_sum = 0, fiou_sum = 0;
  int64_t fiou_count = 0;
  int64_t collided_refined = 0, collided_unrefined = 0, plan_scenes = 0;
  std::array<double, 3> l2r{0, 0, 0}, l2u{0, 0, 0};

  for (size_t si = 0; si < scenes.size(); ++si) {
    const SceneRecord& rec = scenes[si];
    FCtx ctx;
    ctx.training = false;
    if (profiler && si == 0) ctx.profiler = profiler;

    auto per = model.forward_perception(ctx, rec, /*decode=*/stage == 1);
    std::vector<BevOutputs<float>> outputs;
    DriveModel::PredictionOut pred;
    if (stage >= 2) {
      pred = model.forward_prediction(ctx, per, LatentMode::Mean, Rng(0));
      outputs = pred.outputs;
    } else {
      outputs = per.outputs;
    }

    // perception IoU over past frames
    for (int64_t f = 0; f < P; ++f) {
      const BevOutputs<float>& o = outputs[static_cast<size_t>(f)];
      rep.iou_vehicle +=
          segmentation_iou(channel_argmax_fg(o.seg), gt_slice(rec.gt_vehicle, f, G));
      rep.iou_pedestrian +=
          segmentation_iou(channel_argmax_fg(o.ped), gt_slice(rec.gt_pedestrian, f, G));
      rep.iou_drivable += segmentation_iou(
          channel_argmax_fg(slice_channels(o.map, 0, 2)), gt_slice(rec.gt_drivable, f, G));
      rep.iou_lane += segmentation_iou(
          channel_argmax_fg(slice_channels(o.map, 2, 4)), gt_slice(rec.gt_lane, f, G));
    }

    if (stage >= 2) {
      for (int64_t j = 0; j < model.config().n_future; ++j) {
        const int64_t f = P + j;
        const BevOutputs<float>& o = outputs[static_cast<size_t>(f)];
        const TensorF fg = channel_argmax_fg(o.seg);
        const TensorF gt_mask = gt_slice(rec.gt_vehicle, f, G);
        fiou_sum += segmentation_iou(fg, gt_mask);
        ++fiou_count;

        // instance decoding from the heads
        const int64_t gg = G * G;
        TensorF cen({G, G}), offx({G, G}), offy({G, G});
        for (int64_t q = 0; q < gg; ++q) {
          cen[q] = o.inst->value[q];
          offx[q] = o.inst->value[gg + q];
          offy[q] = o.inst->value[2 * gg + q];
        }
        Tensor<int32_t> pred_ids = extract_instances(cen, offx, offy, fg);
        Tensor<int32_t> gt_ids({G, G});
        for (int64_t q = 0; q < gg; ++q)
          gt_ids[q] = static_cast<int32_t>(rec.gt_instance[f * gg + q]);
        PanopticReport pr = panoptic_metrics(pred_ids, gt_ids);
        if (pr.empty_scene) {
          ++rep.panoptic_empty;
        } else {
          pq_sum += pr.pq;
          sq_sum += pr.sq;
          rq_sum += pr.rq;
          ++rep.panoptic_scenes;
        }
      }
    }

    if (stage >= 3) {
      auto plan = model.forward_planning(ctx, rec, outputs, per.front_features);
      const Trajectory& best =
          plan.candidates[static_cast<size_t>(plan.selection.index)];
      const auto er = l2_horizon_errors(plan.refined, rec.expert);
      const auto eu = l2_horizon_errors(best, rec.expert);
      for (int h = 0; h < 3; ++h) {
        l2r[static_cast<size_t>(h)] += er[static_cast<size_t>(h)];
        l2u[static_cast<size_t>(h)] += eu[static_cast<size_t>(h)];
      }
      if (trajectory_collides(plan.refined, rec.gt_occupancy, model.config().planner,
                              model.config().bev))
        ++collided_refined;
      if (trajectory_collides(best, rec.gt_occupancy, model.config().planner,
                              model.config().bev))
        ++collided_unrefined;
      ++plan_scenes;
    }
  }

  const double norm = static_cast<double>(rep.scenes * P);
  rep.iou_vehicle /= norm;
  rep.iou_pedestrian /= norm;
  rep.iou_drivable /= norm;
  rep.iou_lane /= norm;
  rep.iou_avg =
      (rep.iou_vehicle + rep.iou_pedestrian + rep.iou_drivable + rep.iou_lane) / 4.0;
  if (rep.panoptic_scenes > 0) {
    rep.pq = pq_sum / static_cast<double>(rep.panoptic_scenes);
    rep.sq = sq_sum / static_cast<double>(rep.panoptic_scenes);
    rep.rq = rq_sum / static_cast<double>(rep.panoptic_scenes);
  }
  if (fiou_count > 0) rep.future_iou = fiou_sum / static_cast<double>(fiou_count);
  if (plan_scenes > 0) {
    for (int h = 0; h < 3; ++h) {
      rep.plan_refined.l2[static_cast<size_t>(h)] =
          l2r[static_cast<size_t>(h)] / static_cast<double>(plan_scenes);
      rep.plan_unrefined.l2[static_cast<size_t>(h)] =
          l2u[static_cast<size_t>(h)] / static_cast<double>(plan_scenes);
    }
    rep.plan_refined.collision_rate =
        100.0 * static_cast<double>(collided_refined) / static_cast<double>(plan_scenes);
    rep.plan_unrefined.collision_rate =
        100.0 * static_cast<double>(collided_unrefined) / static_cast<double>(plan_scenes);
  }
  return rep;
}

}  // namespace spikedrive
