#include "spikedrive/training.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>

#include "spikedrive/evaluate.hpp"

namespace spikedrive {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (train_dataset.empty()) bad.push_back("train_dataset: path required");
  if (k_frac <= 0.0 || k_frac > 1.0) bad.push_back("k_frac: must be in (0,1]");
  if (gamma <= 0.0 || gamma > 1.0) bad.push_back("gamma: must be in (0,1]");
  if (batch_size < 1) bad.push_back("batch_size: must be >= 1");
  if (grad_clip <= 0.0) bad.push_back("grad_clip: must be positive");
  if (eval_every < 0) bad.push_back("eval_every: must be >= 0");
  for (const auto& s : stages) {
    if (s.lr <= 0.0)
      bad.push_back("stages[" + std::to_string(s.stage) + "].lr: must be positive");
    if (s.epochs < 1)
      bad.push_back("stages[" + std::to_string(s.stage) + "].epochs: must be >= 1");
  }
  if (!bad.empty()) throw ValidationError(bad);
}

json TrainConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["train_dataset"] = train_dataset;
  j["val_dataset"] = val_dataset;
  j["model"] = model.to_json();
  j["k_frac"] = k_frac;
  j["gamma"] = gamma;
  j["batch_size"] = batch_size;
  j["grad_clip"] = grad_clip;
  j["freeze_perception"] = freeze_perception;
  j["eval_every"] = eval_every;
  json st = json::object();
  for (const auto& s : stages)
    st[std::to_string(s.stage)] = {{"lr", s.lr}, {"epochs", s.epochs}};
  j["stages"] = st;
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("train_dataset"))
    cfg.train_dataset = j.at("train_dataset").get<std::string>();
  if (j.contains("val_dataset"))
    cfg.val_dataset = j.at("val_dataset").get<std::string>();
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("k_frac")) cfg.k_frac = j.at("k_frac").get<double>();
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("grad_clip")) cfg.grad_clip = j.at("grad_clip").get<double>();
  if (j.contains("freeze_perception"))
    cfg.freeze_perception = j.at("freeze_perception").get<bool>();
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<int64_t>();
  if (j.contains("stages")) {
    for (auto& s : cfg.stages) {
      const std::string key = std::to_string(s.stage);
      if (j.at("stages").contains(key)) {
        const auto& e = j.at("stages").at(key);
        if (e.contains("lr")) s.lr = e.at("lr").get<double>();
        if (e.contains("epochs")) s.epochs = e.at("epochs").get<int64_t>();
      }
    }
  }
  return cfg;
}

FrameTargets frame_targets(const SceneRecord& rec, int64_t frame) {
  const int64_t G = rec.config.bev.cells;
  const int64_t gg = G * G;
  FrameTargets t;
  auto labels_of = [&](const TensorF& src, int64_t f) {
    Tensor<int32_t> lab({gg});
    for (int64_t i = 0; i < gg; ++i)
      lab[i] = src[f * gg + i] != 0.0f ? 1 : 0;
    return lab;
  };
  t.vehicle = labels_of(rec.gt_vehicle, frame);
  t.pedestrian = labels_of(rec.gt_pedestrian, frame);
  if (frame < rec.config.n_past) {
    t.drivable = labels_of(rec.gt_drivable, frame);
    t.lane = labels_of(rec.gt_lane, frame);
    t.centerness = TensorF({1, 1, G, G});
    std::memcpy(t.centerness.data(), rec.gt_centerness.data() + frame * gg,
                sizeof(float) * gg);
    t.offset = TensorF({1, 2, G, G});
    std::memcpy(t.offset.data(), rec.gt_offset.data() + frame * 2 * gg,
                sizeof(float) * 2 * gg);
    t.flow = TensorF({1, 2, G, G});
    std::memcpy(t.flow.data(), rec.gt_flow.data() + frame * 2 * gg,
                sizeof(float) * 2 * gg);
    t.fg_weight = TensorF({1, 2, G, G});
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < gg; ++i)
        t.fg_weight[c * gg + i] = rec.gt_vehicle[frame * gg + i] != 0.0f ? 1.0f : 0.0f;
  }
  return t;
}

SceneLoss scene_loss(DriveModel& model, const SceneRecord& rec, int stage,
                     const TrainConfig& cfg, const Rng& rng, FCtx& ctx) {
  const int64_t P = model.config().n_past;
  SceneLoss out;

  auto per = model.forward_perception(ctx, rec, /*decode=*/stage == 1);
  std::vector<BevOutputs<float>> outputs;
  DriveModel::PredictionOut pred;
  if (stage >= 2) {
    pred = model.forward_prediction(ctx, per,
                                    ctx.training ? LatentMode::Sample
                                                 : LatentMode::Mean,
                                    rng);
    outputs = pred.outputs;
  } else {
    outputs = per.outputs;
  }

  // perception loss over past frames
  FValue l_per;
  for (int64_t f = 0; f < P; ++f) {
    auto terms = perception_loss(outputs[static_cast<size_t>(f)],
                                 frame_targets(rec, f), cfg.k_frac);
    l_per = l_per ? add(l_per, terms.total) : terms.total;
    out.report.seg += scalar_value(terms.seg);
    out.report.ped += scalar_value(terms.ped);
    out.report.map += scalar_value(terms.map);
    out.report.centerness += scalar_value(terms.centerness);
    out.report.offset += scalar_value(terms.offset);
    out.report.flow += scalar_value(terms.flow);
  }
  l_per = scale(l_per, 1.0f / static_cast<float>(P));
  out.report.seg /= static_cast<double>(P);
  out.report.ped /= static_cast<double>(P);
  out.report.map /= static_cast<double>(P);
  out.report.centerness /= static_cast<double>(P);
  out.report.offset /= static_cast<double>(P);
  out.report.flow /= static_cast<double>(P);
  out.report.l_per = scalar_value(l_per);

  FValue l_pre, l_pla;
  if (stage >= 2) {
    std::vector<BevOutputs<float>> future(outputs.begin() + P, outputs.end());
    std::vector<FrameTargets> future_gt;
    for (int64_t f = P; f < P + model.config().n_future; ++f)
      future_gt.push_back(frame_targets(rec, f));
    l_pre = prediction_loss(future, future_gt, cfg.gamma, cfg.k_frac);
    out.report.l_pre = scalar_value(l_pre);
  }
  if (stage >= 3) {
    auto plan = model.forward_planning(ctx, rec, outputs, per.front_features);
    auto terms = planning_loss(plan.expert_cost, plan.candidate_costs,
                               plan.margins, plan.refined_xy, rec.expert);
    l_pla = terms.total;
    out.report.hinge = scalar_value(terms.hinge);
    out.report.l1 = scalar_value(terms.l1);
    out.report.l_pla = scalar_value(l_pla);
  }

  out.total = composite_loss(l_per, l_pre, l_pla, model.s_pre(), model.s_pla(), stage);
  out.report.l_total = scalar_value(out.total);
  return out;
}

StageResult run_training_stage(DriveModel& model,
                               const std::vector<SceneRecord>& train,
                               const std::vector<SceneRecord>& val,
                               const TrainConfig& cfg, int stage,
                               const std::string& out_dir) {
  contract(stage >= 1 && stage <= 3, "stage must be 1..3");
  contract(!train.empty(), "run_training_stage: empty training dataset");
  const StageConfig& sc = cfg.stages[static_cast<size_t>(stage - 1)];
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
  contract(log.good(), "cannot open metrics log");

  AdamOptimizer<float> opt(sc.lr);
  Rng stage_rng = Rng(cfg.seed).split("stage", static_cast<uint64_t>(stage));

  StageResult result;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < sc.epochs; ++epoch) {
    Rng epoch_rng = stage_rng.split("epoch", static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(order.begin(), order.end());

    LossReport mean{};
    int64_t pending = 0;
    model.params().zero_grads();
    for (size_t pos = 0; pos < order.size(); ++pos) {
      const SceneRecord& rec = train[order[pos]];
      FCtx ctx;
      ctx.training = true;
      SceneLoss sl;
      try {
        sl = scene_loss(model, rec, stage, cfg,
                        epoch_rng.split("scene", static_cast<uint64_t>(pos)), ctx);
      } catch (const FlaggedError& e) {
        throw FlaggedError("training aborted at batch " + std::to_string(pos) +
                           " (scene " + std::to_string(order[pos]) + "): " + e.what());
      }
      if (!std::isfinite(sl.report.l_total))
        throw FlaggedError("non-finite loss at batch " + std::to_string(pos) +
                           " (scene " + std::to_string(order[pos]) + ")");
      backward(sl.total, TensorF::scalar(1.0f / static_cast<float>(cfg.batch_size)));
      ++pending;
      ++global_step;

      mean.l_per += sl.report.l_per;
      mean.l_pre += sl.report.l_pre;
      mean.l_pla += sl.report.l_pla;
      mean.l_total += sl.report.l_total;
      mean.seg += sl.report.seg;
      mean.ped += sl.report.ped;
      mean.map += sl.report.map;
      mean.centerness += sl.report.centerness;
      mean.offset += sl.report.offset;
      mean.flow += sl.report.flow;
      mean.hinge += sl.report.hinge;
      mean.l1 += sl.report.l1;

      if (pending == cfg.batch_size || pos + 1 == order.size()) {
        if (cfg.freeze_perception && stage > 1) {
          for (auto& p : model.params().params()) {
            const bool frozen = p.name.rfind("encoder.", 0) == 0 ||
                                p.name.rfind("decoder.", 0) == 0;
            if (frozen) p.value->zero_grad();
          }
        }
        AdamOptimizer<float>::clip_global_norm(model.params(), cfg.grad_clip);
        opt.step(model.params());
        model.params().zero_grads();
        pending = 0;
      }
    }
    const double n = static_cast<double>(order.size());
    for (double* v : {&mean.l_per, &mean.l_pre, &mean.l_pla, &mean.l_total,
                      &mean.seg, &mean.ped, &mean.map, &mean.centerness,
                      &mean.offset, &mean.flow, &mean.hinge, &mean.l1})
      *v /= n;

    EpochLog entry;
    entry.stage = stage;
    entry.epoch = epoch;
    entry.loss = mean;
    const bool do_eval =
        !val.empty() && ((cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) ||
                         epoch + 1 == sc.epochs);
    if (do_eval) {
      EvalReport ev = evaluate_dataset(model, val, stage);
      entry.metrics = ev.to_json();
    }
    json j = {{"stage", entry.stage},
              {"epoch", entry.epoch},
              {"loss",
               {{"total", mean.l_total},
                {"perception", mean.l_per},
                {"prediction", mean.l_pre},
                {"planning", mean.l_pla},
                {"seg", mean.seg},
                {"ped", mean.ped},
                {"map", mean.map},
                {"centerness", mean.centerness},
                {"offset", mean.offset},
                {"flow", mean.flow},
                {"hinge", mean.hinge},
                {"l1", mean.l1}}}};
    if (!entry.metrics.is_null()) j["metrics"] = entry.metrics;
    log << j.dump() << "\n";
    log.flush();
    result.logs.push_back(std::move(entry));
  }

  save_checkpoint((fs::path(out_dir) / "checkpoint").string(), model.params(),
                  model.config(), stage);
  return result;
}

}  // namespace spikedrive
