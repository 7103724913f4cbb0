#include "mer/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mer/error.hpp"
#include "mer/eval.hpp"
#include "mer/seed.hpp"

namespace mer {

namespace {

using Snapshot = std::map<std::string, std::vector<float>>;

Snapshot snapshot(const ParamStore& p) {
  Snapshot s;
  for (const auto& [name, t] : p.entries()) s[name].assign(t.data().begin(), t.data().end());
  return s;
}

void restore(ParamStore& p, const Snapshot& s) {
  for (auto& [name, t] : p.mutable_entries()) {
    auto dst = t.mutable_data();
    const auto& src = s.at(name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// Endless stream of shuffled passes over the training indices.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> pool, std::size_t batch, std::uint64_t seed)
      : pool_(std::move(pool)), batch_(std::min(batch, pool_.size())), rng_(seed) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == pool_.size()) reshuffle();
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(pool_.begin(), pool_.end(), rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> pool_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::vector<float> weights_for(const Dataset& ds, std::span<const std::size_t> train, bool enabled) {
  if (!enabled) return {};
  auto counts = ds.class_counts(train);
  if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
    spdlog::warn("a class is absent from the training set; using uniform class weights");
    return {};
  }
  return class_weights_inverse_freq(counts);
}

}  // namespace

TrainSplit split_train_val(const Dataset& ds, std::span<const std::size_t> indices, double fraction,
                           std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw ParameterError("val_fraction must be in [0,1)");
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i : indices) groups[{ds.samples.at(i).subject, ds.samples[i].label}].push_back(i);

  TrainSplit split;
  std::mt19937_64 rng(derive_seed(seed, 0x5e1));
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 0.5));
    take = std::min(take, members.size() - 1);
    split.val.insert(split.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

LossConfig loss_config_for(const ModelConfig& cfg, std::vector<float> class_weights) {
  LossConfig lc;
  lc.gamma_focal = cfg.gamma_focal;
  lc.class_weights = std::move(class_weights);
  lc.temperature = cfg.temperature;
  lc.lambda1 = cfg.lambda1;
  lc.lambda2 = cfg.lambda2;
  return lc;
}

TrainResult train(Model& model, const Dataset& ds, const TrainSplit& split, const TrainSchedule& schedule) {
  if (split.train.empty()) throw ContractError("training split is empty");
  if (schedule.batch_size == 0) throw ParameterError("batch_size must be positive");
  if (schedule.eval_interval == 0) throw ParameterError("eval_interval must be positive");

  FlushDenormalsGuard ftz;
  const LossConfig lc = loss_config_for(model.config(), weights_for(ds, split.train, schedule.class_weighting));
  const bool aux = model.config().use_skd;
  TrainState state{.optimizer = Adam(schedule.adam)};
  BatchStream batches(split.train, schedule.batch_size, derive_seed(schedule.seed, 0xba7c));
  Snapshot best;
  TrainResult result;

  while (state.step < schedule.max_steps) {
    ++state.step;
    const auto idx = batches.next();
    const auto labels = batch_labels(ds, idx);
    model.params().zero_grad();
    const ClassifierBundle bundle = model.forward(make_batch(ds, idx), aux);
    LossTerms terms = total_loss(bundle, labels, lc);
    const float loss = terms.total.item();
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(state.step));
    terms.total.backward();
    state.optimizer.step(model.params());

    TrainLogRow row{state.step, loss, terms.focal, terms.kl, terms.l2, std::nullopt};
    bool stop = false;
    if (!split.val.empty() && state.step % schedule.eval_interval == 0) {
      const double v = uar_present(evaluate(model, ds, split.val, Classifier::Deepest));
      row.val_uar = v;
      if (v > state.best_val_uar) {
        state.best_val_uar = v;
        state.best_step = state.step;
        state.patience_counter = 0;
        best = snapshot(model.params());
      } else if (++state.patience_counter >= schedule.patience) {
        stop = true;
      }
      spdlog::debug("step {} loss {:.5f} val_uar {:.4f}", state.step, loss, v);
    }
    result.log.push_back(row);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  model.params().zero_grad();
  if (!best.empty()) restore(model.params(), best);
  result.steps = state.step;
  result.best_step = state.best_step;
  result.best_val_uar = state.best_val_uar;
  return result;
}

TrainResult warm_start(Model& model, const Dataset& macro, std::size_t steps, std::size_t target_classes,
                       const TrainSchedule& schedule) {
  TrainResult result;
  if (steps > 0) {
    if (macro.num_classes != model.config().num_classes) model.replace_heads(macro.num_classes, derive_seed(schedule.seed, 0x3ac));
    TrainSchedule s = schedule;
    s.max_steps = steps;
    TrainSplit split;
    for (std::size_t i = 0; i < macro.samples.size(); ++i) split.train.push_back(i);
    result = train(model, macro, split, s);
  }
  if (steps > 0 || target_classes != model.config().num_classes)
    model.replace_heads(target_classes, derive_seed(schedule.seed, 0x4ead));
  return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream out;
  out.precision(9);
  out << "step,loss_total,loss_fl,loss_kl,loss_l2,val_uar\n";
  for (const auto& r : log) {
    out << r.step << ',' << r.loss_total << ',' << r.loss_fl << ',' << r.loss_kl << ',' << r.loss_l2 << ',';
    if (r.val_uar) out << *r.val_uar;
    out << '\n';
  }
  return out.str();
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << train_log_csv(log);
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace mer
