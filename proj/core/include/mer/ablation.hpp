#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mer/eval.hpp"

namespace mer {

struct AblationRow {
  std::string name;
  bool mag = false, eca = false, tsm = false, skd = false;
  std::vector<std::uint64_t> seeds;
  std::vector<double> uf1, uar;  // one per seed, deepest classifier

  double uf1_mean() const;
  double uar_mean() const;
  /// Half of (max - min) over seeds.
  double uf1_spread() const;
  double uar_spread() const;
};

/// baseline, +Mag, +Mag+ECA, +Mag+TSM, +Mag+ECA+TSM, +all+SKD.
std::vector<AblationRow> ablation_lattice();

/// Runs LOSO for every lattice row and every seed. Seeds are
/// base_seed + 1000 * k for k < num_seeds.
std::vector<AblationRow> run_ablation(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                                      std::size_t num_seeds, const ProtocolOptions& opts);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows);

}  // namespace mer
