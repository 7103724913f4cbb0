#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mer/dataset.hpp"
#include "mer/metrics.hpp"
#include "mer/model.hpp"
#include "mer/train.hpp"

namespace mer {

enum class Classifier { AC1, AC2, Deepest };

const char* classifier_name(Classifier c);
/// Accepts "ac1", "ac2", "deep".
Classifier parse_classifier(const std::string& s);

/// Predicted class (argmax, first on ties) of every selected sample.
std::vector<int> predict(const Model& model, const Dataset& ds, std::span<const std::size_t> indices, Classifier which,
                         std::size_t batch_size = 32);

ConfusionMatrix evaluate(const Model& model, const Dataset& ds, std::span<const std::size_t> indices, Classifier which,
                         std::size_t batch_size = 32);

struct Fold {
  std::string test_subject;
  std::vector<std::string> train_subjects;
};

/// One fold per subject, ordered by subject id.
std::vector<Fold> loso_splits(const std::vector<std::string>& subjects);

/// Sample indices whose subject is (or is not) in `subjects`.
std::vector<std::size_t> indices_of_subjects(const Dataset& ds, const std::vector<std::string>& subjects);

struct ClassifierResult {
  Classifier which = Classifier::Deepest;
  std::vector<ConfusionMatrix> folds;
  ConfusionMatrix pooled;
  double uf1 = 0.0;
  double uar = 0.0;
};

struct FoldSummary {
  std::string test_subject;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_val_uar = 0.0;
};

struct EvalReport {
  std::string protocol;
  std::size_t num_classes = 0;
  std::size_t num_samples = 0;
  bool uf1_literal = false;
  std::vector<FoldSummary> folds;
  std::vector<ClassifierResult> classifiers;

  const ClassifierResult& result(Classifier c) const;
};

struct ProtocolOptions {
  std::uint64_t base_seed = 1;
  std::size_t jobs = 1;
  bool uf1_literal = false;
  /// Classifiers to report; AC entries are dropped when the model has none.
  std::vector<Classifier> classifiers{Classifier::AC1, Classifier::AC2, Classifier::Deepest};
  /// Directory for per-fold training logs; empty disables them.
  std::filesystem::path log_dir;
};

/// Trains one model per fold (seed = base_seed + fold index) and pools the
/// fold confusion matrices by summation.
EvalReport run_loso(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                    const ProtocolOptions& opts);

/// Single split: the given subjects are tested, the rest trained on.
EvalReport run_holdout(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                       const std::vector<std::string>& test_subjects, const ProtocolOptions& opts);

std::string report_json(const EvalReport& r);
std::string report_text(const EvalReport& r);
std::string confusion_csv(const ConfusionMatrix& cm);
/// Writes report.json, report.txt and confusion CSVs under `dir`.
void write_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace mer
