#pragma once

#include "spikedrive/scenario.hpp"

namespace spikedrive {

// On-disk layout:
//   <dir>/manifest.json
//   <dir>/scene_<id>/frames.bin, gt_*.bin   raw little-endian f32 blobs
//   <dir>/scene_<id>/rig.json, expert.json
// The manifest declares every blob's shape; reads validate sizes before
// touching tensor data and reject unknown format versions.
inline constexpr int kDatasetFormatVersion = 1;

void write_dataset(const std::vector<SceneRecord>& scenes,
                   const std::string& dir, uint64_t seed);

std::vector<SceneRecord> read_dataset(const std::string& dir);

// Convenience: generate + render + write in one pass.
void generate_dataset(const ScenarioConfig& base, uint64_t seed,
                      int64_t n_scenes, const std::string& dir);

}  // namespace spikedrive
