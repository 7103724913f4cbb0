#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "mer/ablation.hpp"
#include "mer/error.hpp"
#include "mer/eval.hpp"
#include "mer/train.hpp"
#include "support.hpp"

namespace mer {
namespace {

using testing::toy_dataset;
using testing::toy_model;

TrainSchedule short_schedule() {
  TrainSchedule s;
  s.batch_size = 8;
  s.max_steps = 80;
  s.eval_interval = 20;
  s.seed = 2;
  return s;
}

TEST(Loso, SplitsTestEachSubjectOnce) {
  std::vector<std::string> subs{"s3", "s1", "s2", "s6", "s5", "s4", "s1"};
  auto folds = loso_splits(subs);
  ASSERT_EQ(folds.size(), 6u);
  std::set<std::string> tested;
  for (const auto& f : folds) {
    EXPECT_TRUE(tested.insert(f.test_subject).second);
    EXPECT_EQ(f.train_subjects.size(), 5u);
    EXPECT_EQ(std::count(f.train_subjects.begin(), f.train_subjects.end(), f.test_subject), 0);
  }
  EXPECT_EQ(folds.front().test_subject, "s1");
  EXPECT_THROW(loso_splits({"only"}), ProtocolError);
}

TEST(Eval, ClassifierNames) {
  EXPECT_EQ(parse_classifier("ac1"), Classifier::AC1);
  EXPECT_EQ(parse_classifier("deep"), Classifier::Deepest);
  EXPECT_STREQ(classifier_name(Classifier::AC2), "ac2");
  EXPECT_THROW(parse_classifier("ac3"), ParameterError);
}

TEST(Eval, PredictIsDeterministicAndShiftInvariant) {
  Dataset ds = toy_dataset(2, 3, 2, 1);
  Model m(toy_model(3), 3);
  std::vector<std::size_t> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto p1 = predict(m, ds, idx, Classifier::Deepest);
  EXPECT_EQ(p1, predict(m, ds, idx, Classifier::Deepest, 5));
  EXPECT_EQ(evaluate(m, ds, idx, Classifier::AC1), evaluate(m, ds, idx, Classifier::AC1));

  // A constant added to every logit of a sample leaves the argmax unchanged.
  Tensor bias = m.params().at("head.bias");
  for (auto& v : bias.mutable_data()) v += 7.5f;
  EXPECT_EQ(predict(m, ds, idx, Classifier::Deepest), p1);
}

TEST(Eval, AuxClassifierNeedsSkd) {
  Dataset ds = toy_dataset(1, 2, 1, 2);
  ModelConfig c = toy_model(2);
  c.use_skd = false;
  Model m(c, 4);
  EXPECT_THROW(predict(m, ds, std::vector<std::size_t>{0}, Classifier::AC2), ParameterError);
}

TEST(Eval, LosoOnLearnableToyIsPerfectAndPoolsEverything) {
  Dataset ds = toy_dataset(3, 2, 3, 5);
  ProtocolOptions opts;
  opts.jobs = 2;
  EvalReport r = run_loso(ds, toy_model(2), short_schedule(), opts);
  ASSERT_EQ(r.folds.size(), 3u);
  ASSERT_EQ(r.classifiers.size(), 3u);
  for (const auto& c : r.classifiers) {
    EXPECT_EQ(c.pooled.total(), static_cast<long long>(ds.samples.size()));
    EXPECT_EQ(c.folds.size(), 3u);
  }
  EXPECT_EQ(r.result(Classifier::Deepest).uar, 1.0);
  EXPECT_EQ(r.result(Classifier::Deepest).uf1, 1.0);

  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j["protocol"], "loso");
  EXPECT_EQ(j["classifiers"].size(), 3u);
  for (const char* name : {"ac1", "ac2", "deep"}) {
    EXPECT_GE(j["classifiers"][name]["uar"].get<double>(), 0.0);
    EXPECT_LE(j["classifiers"][name]["uf1"].get<double>(), 1.0);
  }

  // Parallel folds give the same report as sequential ones.
  opts.jobs = 1;
  EXPECT_EQ(report_json(run_loso(ds, toy_model(2), short_schedule(), opts)), report_json(r));
}

TEST(Eval, HoldoutErrors) {
  Dataset ds = toy_dataset(2, 2, 1, 6);
  ProtocolOptions opts;
  EXPECT_THROW(run_holdout(ds, toy_model(2), short_schedule(), {}, opts), ProtocolError);
  EXPECT_THROW(run_holdout(ds, toy_model(2), short_schedule(), {"nobody"}, opts), ProtocolError);
  EXPECT_THROW(run_holdout(ds, toy_model(2), short_schedule(), {"s0", "s1"}, opts), ProtocolError);
}

TEST(Eval, FoldFailureCarriesSubject) {
  Dataset ds = toy_dataset(2, 2, 2, 7);
  for (auto& s : ds.samples)
    if (s.subject == "s1") s.label = 5;
  ProtocolOptions opts;
  try {
    run_loso(ds, toy_model(2), short_schedule(), opts);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("s0"), std::string::npos) << e.what();
  }
}

TEST(Ablation, LatticeStructure) {
  auto rows = ablation_lattice();
  ASSERT_EQ(rows.size(), 6u);
  const bool expect[6][4] = {{0, 0, 0, 0}, {1, 0, 0, 0}, {1, 1, 0, 0}, {1, 0, 1, 0}, {1, 1, 1, 0}, {1, 1, 1, 1}};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].mag, expect[i][0]);
    EXPECT_EQ(rows[i].eca, expect[i][1]);
    EXPECT_EQ(rows[i].tsm, expect[i][2]);
    EXPECT_EQ(rows[i].skd, expect[i][3]);
  }
  AblationRow r;
  r.uar = {0.5, 0.9, 0.7};
  EXPECT_NEAR(r.uar_mean(), 0.7, 1e-12);
  EXPECT_NEAR(r.uar_spread(), 0.2, 1e-12);
}

}  // namespace
}  // namespace mer
