#pragma once

#include "spikedrive/model.hpp"

namespace spikedrive {

inline constexpr int kCheckpointFormatVersion = 1;

// Checkpoint directory: manifest.json (layer names, shapes, dtypes, neuron
// params, residual mode) plus one raw little-endian f32 blob per tensor under
// tensors/, referenced by relative path.
void save_checkpoint(const std::string& dir, ParamRegistry<float>& reg,
                     const ModelConfig& cfg, int stage);

struct CheckpointMeta {
  int stage = 0;
  ModelConfig config;
};

CheckpointMeta read_checkpoint_meta(const std::string& dir);

// Loads tensors into an already-constructed registry; names and shapes must
// match exactly.
void load_checkpoint_tensors(const std::string& dir, ParamRegistry<float>& reg);

}  // namespace spikedrive
