#include "spikedrive/energy.hpp"

namespace spikedrive {

double layer_sops(const LayerProfile& profile) {
  profile.validate();
  return profile.fr * static_cast<double>(profile.timesteps) * profile.flops;
}

EnergyReport estimate_energy(const std::vector<LayerProfile>& profiles,
                             const EnergyModel& model, EnergyKind kind) {
  contract(model.e_mac_pj > 0 && model.e_ac_pj > 0,
           "estimate_energy: energies must be positive");
  EnergyReport rep;
  if (kind == EnergyKind::Ann) {
    for (const auto& p : profiles) {
      p.validate();
      const double pj = model.e_mac_pj * p.flops;
      rep.layers.push_back({p.id, pj});
      rep.total_pj += pj;
    }
  } else {
    int64_t first_count = 0;
    for (const auto& p : profiles)
      if (p.is_first) ++first_count;
    contract(first_count == 1,
             "estimate_energy: SNN mode needs exactly one is_first layer");
    for (const auto& p : profiles) {
      p.validate();
      const double pj = p.is_first ? model.e_mac_pj * p.flops
                                   : model.e_ac_pj * layer_sops(p);
      rep.layers.push_back({p.id, pj});
      rep.total_pj += pj;
    }
  }
  rep.total_mj = rep.total_pj * 1e-9;
  return rep;
}

double energy_ratio(double e_a, double e_b) {
  contract(e_b > 0, "energy_ratio: division by zero");
  return e_a / e_b;
}

}  // namespace spikedrive
