#pragma once

#include <string>
#include <vector>

#include "spikedrive/tensor.hpp"

namespace spikedrive {

// Per-layer record feeding the synaptic-operation energy model. `flops` is a
// MAC count (one MAC per kernel tap per output element); batch-norm and
// pooling are not counted.
struct LayerProfile {
  std::string id;
  std::string kind;  // "conv" | "fc"
  bool is_first = false;
  double flops = 0;
  double fr = 0;  // input firing rate in [0, 1]
  int64_t timesteps = 1;

  void validate() const {
    contract(kind == "conv" || kind == "fc", "LayerProfile: kind must be conv or fc");
    contract(flops >= 0, "LayerProfile: negative FLOPs");
    contract(fr >= 0 && fr <= 1, "LayerProfile: firing rate outside [0,1]");
    contract(timesteps >= 1, "LayerProfile: timesteps must be >= 1");
  }
};

// 45 nm per-operation energies.
struct EnergyModel {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;
};

// SOPs = fr * T * FLOPs
double layer_sops(const LayerProfile& profile);

enum class EnergyKind { Snn, Ann };

struct EnergyReport {
  struct Row {
    std::string id;
    double pj = 0;
  };
  std::vector<Row> layers;
  double total_pj = 0;
  double total_mj = 0;
};

// SNN: E_MAC * FLOPs(first conv) + E_AC * (conv SOPs from layer 2 on + fc
// SOPs). ANN: E_MAC * total FLOPs.
EnergyReport estimate_energy(const std::vector<LayerProfile>& profiles,
                             const EnergyModel& model, EnergyKind kind);

double energy_ratio(double e_a, double e_b);

// Mean of a binary activation tensor.
template <typename T>
double measure_firing_rate(const Tensor<T>& spikes) {
  contract(spikes.size() > 0, "measure_firing_rate: empty tensor");
  double acc = 0;
  for (int64_t i = 0; i < spikes.size(); ++i) {
    contract(spikes[i] == T(0) || spikes[i] == T(1),
             "measure_firing_rate: tensor is not binary");
    acc += static_cast<double>(spikes[i]);
  }
  return acc / static_cast<double>(spikes.size());
}

}  // namespace spikedrive
