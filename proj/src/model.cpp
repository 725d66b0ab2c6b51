#include "spikedrive/model.hpp"

namespace spikedrive {

using json = nlohmann::ordered_json;

void ModelConfig::normalize() {
  decoder.in_channels = encoder.feat_channels;
  prediction.channels = encoder.feat_channels;
  prediction.history = n_past;
  prediction.horizon = n_future;
  planner.sgru_hidden = encoder.feat_channels;
  lif.validate();
  encoder_strategy.validate();
  decoder_strategy.validate();
  contract(fusion_alpha >= 0.0 && fusion_alpha < 1.0,
           "fusion alpha must be in [0,1)");
  contract(n_past >= 1 && n_future >= 1, "need at least one past and future frame");
}

json ModelConfig::to_json() const {
  json j;
  j["encoder"] = {{"channels", encoder.channels},
                  {"pool_after", encoder.pool_after},
                  {"feat_channels", encoder.feat_channels},
                  {"depth_bins", encoder.depth_bins.count},
                  {"depth_range", {encoder.depth_bins.min_depth, encoder.depth_bins.max_depth}}};
  j["decoder"] = {{"stage_channels", decoder.stage_channels},
                  {"head_channels", decoder.head_channels},
                  {"residual_mode", to_string(decoder.residual_mode)}};
  j["prediction"] = {{"latent_len", prediction.latent_len},
                     {"pathway", to_string(prediction.pathway)}};
  j["planner"] = {{"horizon", planner.horizon},
                  {"dt", planner.dt},
                  {"wheelbase", planner.wheelbase},
                  {"steer_max", planner.steer_max},
                  {"accel_max", planner.accel_max},
                  {"n_steer", planner.n_steer},
                  {"n_speed", planner.n_speed},
                  {"max_target_speed", planner.max_target_speed},
                  {"d_cmd", planner.d_cmd},
                  {"c_max", planner.c_max},
                  {"lambda_accel", planner.lambda_accel},
                  {"lambda_jerk", planner.lambda_jerk},
                  {"lambda_curv", planner.lambda_curv},
                  {"lambda_progress", planner.lambda_progress},
                  {"footprint", {planner.footprint_length, planner.footprint_width}},
                  {"speed_margin", planner.speed_margin}};
  j["lif"] = {{"beta", lif.beta},
              {"u_th", lif.u_th},
              {"u_reset", lif.u_reset},
              {"surrogate_width", lif.surrogate_width}};
  j["encoder_strategy"] = encoder_strategy.str();
  j["encoder_timesteps"] = encoder_strategy.repeats;
  j["decoder_strategy"] = decoder_strategy.str();
  j["decoder_timesteps"] = decoder_strategy.repeats;
  j["fusion_alpha"] = fusion_alpha;
  j["bev"] = {{"cells", bev.cells}, {"resolution", bev.resolution}};
  j["n_past"] = n_past;
  j["n_future"] = n_future;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig cfg;
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (e.contains("channels"))
      cfg.encoder.channels = e.at("channels").get<std::vector<int64_t>>();
    if (e.contains("pool_after"))
      cfg.encoder.pool_after = e.at("pool_after").get<std::vector<int64_t>>();
    if (e.contains("feat_channels"))
      cfg.encoder.feat_channels = e.at("feat_channels").get<int64_t>();
    if (e.contains("depth_bins"))
      cfg.encoder.depth_bins.count = e.at("depth_bins").get<int64_t>();
    if (e.contains("depth_range")) {
      cfg.encoder.depth_bins.min_depth = e.at("depth_range")[0].get<double>();
      cfg.encoder.depth_bins.max_depth = e.at("depth_range")[1].get<double>();
    }
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    if (d.contains("stage_channels"))
      cfg.decoder.stage_channels = d.at("stage_channels").get<std::vector<int64_t>>();
    if (d.contains("head_channels"))
      cfg.decoder.head_channels = d.at("head_channels").get<int64_t>();
    if (d.contains("residual_mode"))
      cfg.decoder.residual_mode =
          residual_mode_from(d.at("residual_mode").get<std::string>());
  }
  if (j.contains("prediction")) {
    const auto& p = j.at("prediction");
    if (p.contains("latent_len"))
      cfg.prediction.latent_len = p.at("latent_len").get<int64_t>();
    if (p.contains("pathway"))
      cfg.prediction.pathway = pathway_mode_from(p.at("pathway").get<std::string>());
  }
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    auto rd = [&](const char* k, double& v) {
      if (p.contains(k)) v = p.at(k).get<double>();
    };
    rd("horizon", cfg.planner.horizon);
    rd("dt", cfg.planner.dt);
    rd("wheelbase", cfg.planner.wheelbase);
    rd("steer_max", cfg.planner.steer_max);
    rd("accel_max", cfg.planner.accel_max);
    rd("max_target_speed", cfg.planner.max_target_speed);
    rd("d_cmd", cfg.planner.d_cmd);
    rd("c_max", cfg.planner.c_max);
    rd("lambda_accel", cfg.planner.lambda_accel);
    rd("lambda_jerk", cfg.planner.lambda_jerk);
    rd("lambda_curv", cfg.planner.lambda_curv);
    rd("lambda_progress", cfg.planner.lambda_progress);
    rd("speed_margin", cfg.planner.speed_margin);
    if (p.contains("n_steer")) cfg.planner.n_steer = p.at("n_steer").get<int64_t>();
    if (p.contains("n_speed")) cfg.planner.n_speed = p.at("n_speed").get<int64_t>();
    if (p.contains("footprint")) {
      cfg.planner.footprint_length = p.at("footprint")[0].get<double>();
      cfg.planner.footprint_width = p.at("footprint")[1].get<double>();
    }
  }
  if (j.contains("lif")) {
    const auto& l = j.at("lif");
    if (l.contains("beta")) cfg.lif.beta = l.at("beta").get<double>();
    if (l.contains("u_th")) cfg.lif.u_th = l.at("u_th").get<double>();
    if (l.contains("u_reset")) cfg.lif.u_reset = l.at("u_reset").get<double>();
    if (l.contains("surrogate_width"))
      cfg.lif.surrogate_width = l.at("surrogate_width").get<double>();
  }
  if (j.contains("encoder_strategy"))
    cfg.encoder_strategy = TimestepStrategy::parse(
        j.at("encoder_strategy").get<std::string>(),
        j.value("encoder_timesteps", int64_t(2)));
  if (j.contains("decoder_strategy"))
    cfg.decoder_strategy = TimestepStrategy::parse(
        j.at("decoder_strategy").get<std::string>(),
        j.value("decoder_timesteps", int64_t(2)));
  if (j.contains("fusion_alpha")) cfg.fusion_alpha = j.at("fusion_alpha").get<double>();
  if (j.contains("bev")) {
    cfg.bev.cells = j.at("bev").at("cells").get<int64_t>();
    cfg.bev.resolution = j.at("bev").at("resolution").get<double>();
  }
  if (j.contains("n_past")) cfg.n_past = j.at("n_past").get<int64_t>();
  if (j.contains("n_future")) cfg.n_future = j.at("n_future").get<int64_t>();
  cfg.normalize();
  return cfg;
}

DriveModel::DriveModel(const ModelConfig& config, uint64_t init_seed)
    : cfg_(config) {
  cfg_.normalize();
  Rng rng(init_seed);
  encoder_ = StmEncoder<float>(reg_, rng.split("encoder"), cfg_.encoder, cfg_.lif);
  decoder_ = BevDecoder<float>(reg_, rng.split("decoder"), cfg_.decoder, cfg_.lif);
  predictor_ = DualPathwayPredictor<float>(reg_, rng.split("prediction"),
                                           cfg_.prediction, cfg_.lif);
  sgru_ = SgruWeights<float>::create(reg_, rng.split("sgru"), "sgru", 6,
                                     cfg_.planner.sgru_hidden);
  readout_ = DenseLayer<float>(reg_, rng.split("readout"), "readout",
                               cfg_.planner.sgru_hidden, 2, /*zero_init=*/true);
  s_pre_ = reg_.add("loss.s_pre", TensorF({1}));
  s_pla_ = reg_.add("loss.s_pla", TensorF({1}));
  w_o_ = reg_.add("planner.w_o", TensorF::full({1}, 1.0f));
  w_v_ = reg_.add("planner.w_v", TensorF::full({1}, 1.0f));
  w_r_ = reg_.add("planner.w_r", TensorF::full({1}, 1.0f));
}

CostWeights DriveModel::cost_weights() const {
  return {static_cast<double>(w_o_->value[0]),
          static_cast<double>(w_v_->value[0]),
          static_cast<double>(w_r_->value[0])};
}

std::vector<FValue> DriveModel::frame_values(const SceneRecord& rec,
                                             int64_t first, int64_t count) {
  const auto& s = rec.frames.shape();
  contract(s.size() == 5, "frame_values: bad frames tensor");
  contract(first >= 0 && first + count <= s[0], "frame_values: range out of bounds");
  const int64_t inner = s[1] * s[2] * s[3] * s[4];
  std::vector<FValue> out;
  for (int64_t f = first; f < first + count; ++f) {
    TensorF t({s[1], s[2], s[3], s[4]});
    std::memcpy(t.data(), rec.frames.data() + f * inner, sizeof(float) * inner);
    out.push_back(constant(std::move(t)));
  }
  return out;
}

DriveModel::PerceptionOut DriveModel::forward_perception(FCtx& ctx,
                                                         const SceneRecord& rec,
                                                         bool decode) {
  contract(rec.frames.dim(0) >= cfg_.n_past, "scene has too few frames");
  auto frames = frame_values(rec, 0, cfg_.n_past);
  FeatDepth<float> fd = encoder_.forward(ctx, frames, cfg_.encoder_strategy);

  const int64_t ds = cfg_.encoder.downsample();
  const int64_t fh = rec.config.image_h / ds, fw = rec.config.image_w / ds;
  if (!geom_ready_) {
    geom_ = SplatGeometry::build(rec.rigs, cfg_.encoder.depth_bins, cfg_.bev,
                                 fh, fw, ds);
    geom_ready_ = true;
  }
  contract(geom_.fh == fh && geom_.fw == fw &&
               geom_.cams == static_cast<int64_t>(rec.rigs.size()),
           "scene geometry does not match the model's splat table");

  FValue b_all = lift_splat(fd, geom_, cfg_.bev);
  std::vector<FValue> b_frames;
  for (int64_t l = 0; l < cfg_.n_past; ++l)
    b_frames.push_back(slice_batch(b_all, l, l + 1));

  std::vector<std::vector<int64_t>> warps;
  for (int64_t l = 0; l + 1 < cfg_.n_past; ++l)
    warps.push_back(cfg_.bev.warp_map(rec.frame_poses[l], rec.frame_poses[l + 1]));

  PerceptionOut out;
  out.fused = fuse_bev_history(b_frames, cfg_.fusion_alpha, &warps);

  const int64_t N = rec.config.n_cameras;
  const int64_t front = (cfg_.n_past - 1) * N;  // present frame, camera 0
  out.front_features = global_avg_pool(slice_batch(fd.features, front, front + 1));

  if (decode)
    out.outputs = decoder_.forward(ctx, out.fused, cfg_.decoder_strategy);
  return out;
}

DriveModel::PredictionOut DriveModel::forward_prediction(FCtx& ctx,
                                                         const PerceptionOut& per,
                                                         LatentMode mode,
                                                         const Rng& rng) {
  HistoryBuffer<float> hist(cfg_.n_past);
  for (const auto& x : per.fused) hist.push(x);

  PredictionOut out;
  out.raw_future = predictor_.rollout(ctx, hist, cfg_.n_future, mode,
                                      rng.split("rollout"));
  std::vector<FValue> seq = per.fused;
  for (const auto& s : out.raw_future.steps) seq.push_back(s);
  out.sequence = predictor_.temporal_mix(ctx, seq);
  out.outputs = decoder_.forward(ctx, out.sequence, cfg_.decoder_strategy);
  return out;
}

FValue DriveModel::in_graph_cost(const Trajectory& traj,
                                 const std::vector<FValue>& occ_steps,
                                 const std::vector<FValue>& cv_steps,
                                 const Vec2& target) {
  const int64_t n_occ = static_cast<int64_t>(occ_steps.size());
  FValue occ_sum, cv_sum;
  for (size_t k = 1; k < traj.poses.size(); ++k) {
    const EgoState& p = traj.poses[k];
    const int64_t j = std::min<int64_t>(static_cast<int64_t>(k) - 1, n_occ - 1);
    auto cells = footprint_cells(p.pose(), p.speed, cfg_.planner, cfg_.bev);
    if (!cells.empty()) {
      FValue term = gather_sum(occ_steps[j], cells);
      occ_sum = occ_sum ? add(occ_sum, term) : term;
    }
    int64_t ci, cj;
    if (cfg_.bev.cell_of(p.x, p.y, ci, cj)) {
      FValue term = gather_sum(cv_steps[j], {ci * cfg_.bev.cells + cj});
      cv_sum = cv_sum ? add(cv_sum, term) : term;
    }
  }
  if (!occ_sum) occ_sum = constant(TensorF::scalar(0.0f));
  if (!cv_sum) cv_sum = constant(TensorF::scalar(0.0f));

  double sum_alat2 = 0, sum_jerk2 = 0, sum_curv2 = 0;
  for (size_t k = 0; k < traj.controls.size(); ++k) {
    const double curv = std::tan(traj.controls[k].steer) / cfg_.planner.wheelbase;
    const double v = traj.poses[k].speed;
    sum_alat2 += (v * v * curv) * (v * v * curv);
    sum_curv2 += curv * curv;
    if (k + 1 < traj.controls.size()) {
      const double jerk =
          (traj.controls[k + 1].accel - traj.controls[k].accel) / traj.dt;
      sum_jerk2 += jerk * jerk;
    }
  }
  const Vec2 start{traj.poses.front().x, traj.poses.front().y};
  const Vec2 end{traj.poses.back().x, traj.poses.back().y};
  const double progress = (target - start).norm() - (target - end).norm();
  const double comfort = cfg_.planner.lambda_accel * sum_alat2 +
                         cfg_.planner.lambda_jerk * sum_jerk2 +
                         cfg_.planner.lambda_curv * sum_curv2 -
                         cfg_.planner.lambda_progress * progress;

  FValue f = add(mul(w_o_, occ_sum), mul(w_v_, cv_sum));
  return add(f, mul(w_r_, constant(TensorF::scalar(static_cast<float>(comfort)))));
}

DriveModel::PlanOut DriveModel::forward_planning(
    FCtx& ctx, const SceneRecord& rec,
    const std::vector<BevOutputs<float>>& outputs, const FValue& front_features) {
  contract(static_cast<int64_t>(outputs.size()) >= cfg_.n_past + cfg_.n_future,
           "forward_planning needs decoded future frames");
  const int64_t G = cfg_.bev.cells;

  PlanOut plan;
  // predicted occupancy and cost volume per future step (in-graph)
  std::vector<FValue> occ_steps, cv_steps;
  for (int64_t j = 0; j < cfg_.n_future; ++j) {
    const BevOutputs<float>& o = outputs[static_cast<size_t>(cfg_.n_past + j)];
    FValue p_veh = slice_channels(softmax_channels(o.seg), 1, 2);
    FValue p_ped = slice_channels(softmax_channels(o.ped), 1, 2);
    occ_steps.push_back(clip(add(p_veh, p_ped), 0.0f, 1.0f));
    cv_steps.push_back(clip(channel_abs_mean(o.inst), -static_cast<float>(cfg_.planner.c_max),
                            static_cast<float>(cfg_.planner.c_max)));
  }

  // numeric copies for selection and reporting
  plan.occupancy.occupancy = TensorF({cfg_.n_future, G, G});
  plan.cost_volume = TensorF({cfg_.n_future, G, G});
  for (int64_t j = 0; j < cfg_.n_future; ++j) {
    std::memcpy(plan.occupancy.occupancy.data() + j * G * G,
                occ_steps[static_cast<size_t>(j)]->value.data(), sizeof(float) * G * G);
    std::memcpy(plan.cost_volume.data() + j * G * G,
                cv_steps[static_cast<size_t>(j)]->value.data(), sizeof(float) * G * G);
  }
  {  // map priors from the present frame's map head
    const BevOutputs<float>& o = outputs[static_cast<size_t>(cfg_.n_past - 1)];
    FValue drv = slice_channels(softmax_channels(slice_channels(o.map, 0, 2)), 1, 2);
    FValue lane = slice_channels(softmax_channels(slice_channels(o.map, 2, 4)), 1, 2);
    plan.occupancy.drivable = TensorF({G, G});
    plan.occupancy.lane = TensorF({G, G});
    std::memcpy(plan.occupancy.drivable.data(), drv->value.data(), sizeof(float) * G * G);
    std::memcpy(plan.occupancy.lane.data(), lane->value.data(), sizeof(float) * G * G);
  }

  EgoState ego{0.0, 0.0, 0.0, rec.frame_speeds[static_cast<size_t>(cfg_.n_past - 1)]};
  plan.candidates = sample_trajectories(ego, cfg_.planner);
  const CostWeights w = cost_weights();
  for (const auto& tau : plan.candidates)
    plan.costs.push_back(evaluate_cost(tau, plan.occupancy, plan.cost_volume,
                                       rec.target, w, cfg_.planner, cfg_.bev));
  plan.selection = select_best(plan.candidates, plan.costs, rec.command, cfg_.planner);

  // in-graph costs for the max-margin loss
  plan.expert_cost = in_graph_cost(rec.expert, occ_steps, cv_steps, rec.target);
  for (const auto& tau : plan.candidates) {
    plan.candidate_costs.push_back(in_graph_cost(tau, occ_steps, cv_steps, rec.target));
    plan.margins.push_back(trajectory_margin(tau, rec.expert));
  }

  // SGRU refinement of the selected trajectory
  const Trajectory& best = plan.candidates[static_cast<size_t>(plan.selection.index)];
  FValue h = spike_gate(affine(front_features, 1.0f,
                               -static_cast<float>(cfg_.lif.u_th)),
                        static_cast<float>(cfg_.lif.surrogate_width),
                        ctx.smooth_spikes);
  plan.refined = best;
  for (size_t k = 1; k < best.poses.size(); ++k) {
    TensorF x({1, 6});
    x[0] = static_cast<float>(ego.x);
    x[1] = static_cast<float>(ego.y);
    x[2] = static_cast<float>(best.poses[k].x);
    x[3] = static_cast<float>(best.poses[k].y);
    x[4] = static_cast<float>(rec.target.x);
    x[5] = static_cast<float>(rec.target.y);
    h = sgru_cell(constant(std::move(x)), h, sgru_,
                  static_cast<float>(cfg_.lif.surrogate_width), ctx.smooth_spikes);
    if (ctx.audit) ctx.audit->observe("sgru.h", h->value, 1);
    FValue delta = readout_.forward(ctx, h);
    TensorF base({1, 2});
    base[0] = static_cast<float>(best.poses[k].x);
    base[1] = static_cast<float>(best.poses[k].y);
    FValue xy = add(constant(std::move(base)), delta);
    plan.refined_xy.push_back(xy);
    plan.refined.poses[k].x = static_cast<double>(xy->value[0]);
    plan.refined.poses[k].y = static_cast<double>(xy->value[1]);
  }
  return plan;
}

}  // namespace spikedrive
