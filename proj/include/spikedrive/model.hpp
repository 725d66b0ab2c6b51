#pragma once

#include "spikedrive/losses.hpp"
#include "spikedrive/prediction.hpp"
#include "spikedrive/scenario.hpp"

#include "json.hpp"

namespace spikedrive {

using FCtx = Ctx<float>;
using FValue = Value<float>;

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  PredictionConfig prediction;
  PlannerParams planner;
  LifParams lif;
  TimestepStrategy encoder_strategy = TimestepStrategy::sr(2);
  TimestepStrategy decoder_strategy = TimestepStrategy::sa();
  double fusion_alpha = 0.5;
  BevSpec bev{48, 0.5};
  int64_t n_past = 3;
  int64_t n_future = 4;

  void normalize();  // propagate shared widths, then validate

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::ordered_json& j);
};

// The full driving stack: spiking encoder -> frustum splat -> discounted BEV
// fusion -> dual-pathway future rollout -> shared decoder heads -> sampling
// planner with SGRU refinement. Float precision; parameters live in one
// registry for the optimizer and checkpointing.
class DriveModel {
 public:
  DriveModel(const ModelConfig& config, uint64_t init_seed);

  ParamRegistry<float>& params() { return reg_; }
  const ModelConfig& config() const { return cfg_; }

  struct PerceptionOut {
    std::vector<FValue> fused;                 // per past frame [1, Cf, G, G]
    std::vector<BevOutputs<float>> outputs;    // per past frame (when decoded)
    FValue front_features;                     // [1, Cf] pooled, present frame
  };
  // decode=false skips the decoder (stages >= 2 decode after temporal mixing).
  PerceptionOut forward_perception(FCtx& ctx, const SceneRecord& rec, bool decode);

  struct PredictionOut {
    std::vector<FValue> sequence;              // mixed past+future spike features
    std::vector<BevOutputs<float>> outputs;    // per frame, past first
    FuturePrediction<float> raw_future;        // dual-pathway counts
  };
  PredictionOut forward_prediction(FCtx& ctx, const PerceptionOut& per,
                                   LatentMode mode, const Rng& rng);

  struct PlanOut {
    std::vector<Trajectory> candidates;
    std::vector<CostBreakdown> costs;
    Selection selection;
    Trajectory refined;
    OccupancyMap occupancy;                    // predicted, numeric
    TensorF cost_volume;                       // [steps, G, G] numeric
    // in-graph pieces for the planning loss
    FValue expert_cost;
    std::vector<FValue> candidate_costs;
    std::vector<double> margins;
    std::vector<FValue> refined_xy;            // per refined step [1, 2]
  };
  PlanOut forward_planning(FCtx& ctx, const SceneRecord& rec,
                           const std::vector<BevOutputs<float>>& outputs,
                           const FValue& front_features);

  // loss-weight and cost-weight parameters
  FValue s_pre() { return s_pre_; }
  FValue s_pla() { return s_pla_; }
  CostWeights cost_weights() const;

  // Constant input frames for one past/future window of a scene.
  static std::vector<FValue> frame_values(const SceneRecord& rec, int64_t first,
                                          int64_t count);

 private:
  FValue in_graph_cost(const Trajectory& traj,
                       const std::vector<FValue>& occ_steps,
                       const std::vector<FValue>& cv_steps, const Vec2& target);

  ModelConfig cfg_;
  ParamRegistry<float> reg_;
  StmEncoder<float> encoder_;
  BevDecoder<float> decoder_;
  DualPathwayPredictor<float> predictor_;
  SgruWeights<float> sgru_;
  DenseLayer<float> readout_;
  FValue s_pre_, s_pla_;
  FValue w_o_, w_v_, w_r_;

  bool geom_ready_ = false;
  SplatGeometry geom_;
};

}  // namespace spikedrive
