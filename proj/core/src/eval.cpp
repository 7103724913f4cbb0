#include "mer/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mer/error.hpp"

namespace mer {

const char* classifier_name(Classifier c) {
  switch (c) {
    case Classifier::AC1: return "ac1";
    case Classifier::AC2: return "ac2";
    case Classifier::Deepest: return "deep";
  }
  return "?";
}

Classifier parse_classifier(const std::string& s) {
  if (s == "ac1") return Classifier::AC1;
  if (s == "ac2") return Classifier::AC2;
  if (s == "deep") return Classifier::Deepest;
  throw ParameterError("unknown classifier '" + s + "' (expected ac1, ac2 or deep)");
}

std::vector<int> predict(const Model& model, const Dataset& ds, std::span<const std::size_t> indices, Classifier which,
                         std::size_t batch_size) {
  const bool aux = which != Classifier::Deepest;
  if (aux && !model.config().use_skd)
    throw ParameterError(std::string("classifier ") + classifier_name(which) + " requires use_skd");
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  NoGradGuard guard;
  FlushDenormalsGuard ftz;
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const ClassifierBundle b = model.forward(make_batch(ds, chunk), aux);
    const Tensor& logits = which == Classifier::Deepest ? b.deepest_logits() : b.logits[which == Classifier::AC1 ? 0 : 1];
    const std::size_t k = logits.dim(1);
    auto d = logits.data();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto row = d.subspan(r * k, k);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

ConfusionMatrix evaluate(const Model& model, const Dataset& ds, std::span<const std::size_t> indices, Classifier which,
                         std::size_t batch_size) {
  const auto pred = predict(model, ds, indices, which, batch_size);
  ConfusionMatrix cm(model.config().num_classes);
  for (std::size_t i = 0; i < indices.size(); ++i)
    cm.add(static_cast<std::size_t>(ds.samples.at(indices[i]).label), static_cast<std::size_t>(pred[i]));
  return cm;
}

std::vector<Fold> loso_splits(const std::vector<std::string>& subjects) {
  std::vector<std::string> sorted = subjects;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.size() < 2) throw ProtocolError("LOSO needs at least 2 subjects, got " + std::to_string(sorted.size()));
  std::vector<Fold> folds;
  for (const auto& test : sorted) {
    Fold f{test, {}};
    for (const auto& s : sorted)
      if (s != test) f.train_subjects.push_back(s);
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<std::size_t> indices_of_subjects(const Dataset& ds, const std::vector<std::string>& subjects) {
  const std::set<std::string> want(subjects.begin(), subjects.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    if (want.count(ds.samples[i].subject)) out.push_back(i);
  return out;
}

const ClassifierResult& EvalReport::result(Classifier c) const {
  for (const auto& r : classifiers)
    if (r.which == c) return r;
  throw ParameterError(std::string("report has no classifier ") + classifier_name(c));
}

namespace {

struct FoldOutcome {
  FoldSummary summary;
  std::vector<ConfusionMatrix> cms;
};

std::vector<Classifier> active_classifiers(const ModelConfig& cfg, const ProtocolOptions& opts) {
  std::vector<Classifier> out;
  for (Classifier c : opts.classifiers)
    if (c == Classifier::Deepest || cfg.use_skd) out.push_back(c);
  if (out.empty()) throw ParameterError("no classifier to report (auxiliary classifiers need use_skd)");
  return out;
}

EvalReport run_folds(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                     const std::vector<Fold>& folds, const ProtocolOptions& opts, const std::string& protocol) {
  ModelConfig mc = cfg;
  mc.num_classes = ds.num_classes;
  mc.validate();
  const auto which = active_classifiers(mc, opts);

  std::vector<FoldOutcome> outcomes(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};

  auto run_one = [&](std::size_t f) {
    const Fold& fold = folds[f];
    const std::uint64_t seed = opts.base_seed + f;
    const auto train_idx = indices_of_subjects(ds, fold.train_subjects);
    const auto test_idx = indices_of_subjects(ds, {fold.test_subject});
    TrainSchedule s = schedule;
    s.seed = seed;
    Model model(mc, seed);
    const TrainSplit split = split_train_val(ds, train_idx, s.val_fraction, seed);
    const TrainResult tr = train(model, ds, split, s);
    if (!opts.log_dir.empty()) write_train_log(tr.log, opts.log_dir / ("train_log_" + fold.test_subject + ".csv"));
    FoldOutcome& o = outcomes[f];
    o.summary = {fold.test_subject, tr.steps, tr.best_step, tr.best_val_uar};
    for (Classifier c : which) o.cms.push_back(evaluate(model, ds, test_idx, c));
    long long correct = 0;
    for (std::size_t k = 0; k < mc.num_classes; ++k) correct += o.cms.back().tp(k);
    spdlog::info("fold {}/{} subject {}: {} steps, {}/{} correct", f + 1, folds.size(), fold.test_subject, tr.steps,
                 correct, test_idx.size());
  };

  auto worker = [&] {
    for (std::size_t f = next++; f < folds.size(); f = next++) {
      try {
        run_one(f);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, folds.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (!errors[f]) continue;
    try {
      std::rethrow_exception(errors[f]);
    } catch (const NumericalError& e) {
      throw NumericalError("fold " + std::to_string(f) + " (subject " + folds[f].test_subject + "): " + e.what());
    } catch (const IoError& e) {
      throw IoError("fold " + std::to_string(f) + " (subject " + folds[f].test_subject + "): " + e.what());
    } catch (const Error& e) {
      throw ProtocolError("fold " + std::to_string(f) + " (subject " + folds[f].test_subject + "): " + e.what());
    }
  }

  EvalReport report;
  report.protocol = protocol;
  report.num_classes = mc.num_classes;
  report.uf1_literal = opts.uf1_literal;
  for (const auto& o : outcomes) report.folds.push_back(o.summary);
  for (std::size_t c = 0; c < which.size(); ++c) {
    ClassifierResult r;
    r.which = which[c];
    r.pooled = ConfusionMatrix(mc.num_classes);
    for (const auto& o : outcomes) {
      r.folds.push_back(o.cms[c]);
      r.pooled += o.cms[c];
    }
    r.uf1 = uf1(r.pooled, opts.uf1_literal);
    r.uar = uar_present(r.pooled);
    report.classifiers.push_back(std::move(r));
  }
  report.num_samples = static_cast<std::size_t>(report.classifiers.front().pooled.total());
  return report;
}

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

EvalReport run_loso(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                    const ProtocolOptions& opts) {
  return run_folds(ds, cfg, schedule, loso_splits(ds.subjects()), opts, "loso");
}

EvalReport run_holdout(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                       const std::vector<std::string>& test_subjects, const ProtocolOptions& opts) {
  const auto all = ds.subjects();
  if (test_subjects.empty()) throw ProtocolError("holdout needs at least one test subject");
  Fold fold;
  std::set<std::string> test(test_subjects.begin(), test_subjects.end());
  for (const auto& s : test)
    if (!std::binary_search(all.begin(), all.end(), s)) throw ProtocolError("unknown test subject '" + s + "'");
  for (const auto& s : all)
    if (!test.count(s)) fold.train_subjects.push_back(s);
  if (fold.train_subjects.empty()) throw ProtocolError("holdout leaves no training subjects");
  std::string name;
  for (const auto& s : test) name += (name.empty() ? "" : "+") + s;
  fold.test_subject = name;

  ModelConfig mc = cfg;
  mc.num_classes = ds.num_classes;
  mc.validate();
  const auto which = active_classifiers(mc, opts);
  Model model(mc, opts.base_seed);
  TrainSchedule s = schedule;
  s.seed = opts.base_seed;
  const auto train_idx = indices_of_subjects(ds, fold.train_subjects);
  const auto test_idx = indices_of_subjects(ds, {test.begin(), test.end()});
  const TrainResult tr = train(model, ds, split_train_val(ds, train_idx, s.val_fraction, s.seed), s);
  if (!opts.log_dir.empty()) write_train_log(tr.log, opts.log_dir / "train_log.csv");

  EvalReport report;
  report.protocol = "holdout";
  report.num_classes = mc.num_classes;
  report.uf1_literal = opts.uf1_literal;
  report.folds.push_back({name, tr.steps, tr.best_step, tr.best_val_uar});
  for (Classifier c : which) {
    ClassifierResult r;
    r.which = c;
    r.pooled = evaluate(model, ds, test_idx, c);
    r.folds.push_back(r.pooled);
    r.uf1 = uf1(r.pooled, opts.uf1_literal);
    r.uar = uar_present(r.pooled);
    report.classifiers.push_back(std::move(r));
  }
  report.num_samples = test_idx.size();
  return report;
}

std::string report_json(const EvalReport& r) {
  using nlohmann::ordered_json;
  auto matrix = [](const ConfusionMatrix& cm) {
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < cm.classes(); ++i) {
      ordered_json row = ordered_json::array();
      for (std::size_t j = 0; j < cm.classes(); ++j) row.push_back(cm.at(i, j));
      rows.push_back(row);
    }
    return rows;
  };
  ordered_json j;
  j["protocol"] = r.protocol;
  j["num_classes"] = r.num_classes;
  j["num_samples"] = r.num_samples;
  j["uf1_literal"] = r.uf1_literal;
  ordered_json folds = ordered_json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"test_subject", f.test_subject},
                     {"steps", f.steps},
                     {"best_step", f.best_step},
                     {"best_val_uar", f.best_val_uar}});
  j["folds"] = folds;
  ordered_json cls = ordered_json::object();
  for (const auto& c : r.classifiers) {
    ordered_json per = ordered_json::array();
    for (std::size_t f = 0; f < c.folds.size(); ++f)
      per.push_back({{"test_subject", r.folds[f].test_subject}, {"confusion", matrix(c.folds[f])}});
    cls[classifier_name(c.which)] = {{"uf1", c.uf1}, {"uar", c.uar}, {"pooled_confusion", matrix(c.pooled)}, {"folds", per}};
  }
  j["classifiers"] = cls;
  return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out << "protocol " << r.protocol << ", " << r.folds.size() << " fold(s), " << r.num_samples << " samples, "
      << r.num_classes << " classes\n\n";
  out << std::left << std::setw(12) << "classifier" << std::right << std::setw(8) << "UF1" << std::setw(8) << "UAR"
      << "\n";
  for (const auto& c : r.classifiers)
    out << std::left << std::setw(12) << classifier_name(c.which) << std::right << std::setw(8) << fmt_metric(c.uf1)
        << std::setw(8) << fmt_metric(c.uar) << "\n";
  for (const auto& c : r.classifiers) {
    out << "\npooled confusion (" << classifier_name(c.which) << "), rows = truth\n";
    for (std::size_t i = 0; i < c.pooled.classes(); ++i) {
      for (std::size_t j = 0; j < c.pooled.classes(); ++j) out << std::setw(6) << c.pooled.at(i, j);
      out << "\n";
    }
  }
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "truth";
  for (std::size_t j = 0; j < cm.classes(); ++j) out << ",pred_" << j;
  out << "\n";
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    out << i;
    for (std::size_t j = 0; j < cm.classes(); ++j) out << ',' << cm.at(i, j);
    out << "\n";
  }
  return out.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  auto put = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(dir / p, std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / p).string());
    f << text;
    if (!f) throw IoError("failed writing " + (dir / p).string());
  };
  put("report.json", report_json(r));
  put("report.txt", report_text(r));
  for (const auto& c : r.classifiers) {
    const std::string tag = classifier_name(c.which);
    put("confusion_" + tag + "_pooled.csv", confusion_csv(c.pooled));
    for (std::size_t f = 0; f < c.folds.size(); ++f)
      put("confusion_" + tag + "_" + r.folds[f].test_subject + ".csv", confusion_csv(c.folds[f]));
  }
}

}  // namespace mer
