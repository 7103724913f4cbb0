#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mer/dataset.hpp"
#include "mer/losses.hpp"
#include "mer/model.hpp"
#include "mer/optim.hpp"

namespace mer {

struct TrainSchedule {
  std::size_t batch_size = 16;
  std::size_t max_steps = 200;
  std::size_t eval_interval = 100;
  std::size_t patience = 5;
  double val_fraction = 0.1;
  bool class_weighting = true;
  AdamConfig adam;
  std::uint64_t seed = 1;
};

struct TrainSplit {
  std::vector<std::size_t> train, val;
};

/// Holds out about `fraction` of every (subject, label) group for validation.
TrainSplit split_train_val(const Dataset& ds, std::span<const std::size_t> indices, double fraction,
                           std::uint64_t seed);

struct TrainLogRow {
  std::size_t step = 0;
  double loss_total = 0.0, loss_fl = 0.0, loss_kl = 0.0, loss_l2 = 0.0;
  /// Only set on evaluation steps.
  std::optional<double> val_uar;
};

struct TrainState {
  std::size_t step = 0;
  Adam optimizer;
  double best_val_uar = -1.0;
  std::size_t best_step = 0;
  std::size_t patience_counter = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_val_uar = -1.0;
  bool early_stopped = false;
};

LossConfig loss_config_for(const ModelConfig& cfg, std::vector<float> class_weights);

/// Mini-batch training with validation-UAR early stopping. When a validation
/// set is present the weights of the best evaluation are restored at the end.
/// Throws NumericalError naming the step on a non-finite loss.
TrainResult train(Model& model, const Dataset& ds, const TrainSplit& split, const TrainSchedule& schedule);

/// Trains every weight on `macro` for `steps` steps, then re-creates the
/// classifier heads for `target_classes`.
TrainResult warm_start(Model& model, const Dataset& macro, std::size_t steps, std::size_t target_classes,
                       const TrainSchedule& schedule);

std::string train_log_csv(const std::vector<TrainLogRow>& log);
void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace mer
