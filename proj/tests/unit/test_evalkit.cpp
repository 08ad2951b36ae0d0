#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "less/evalkit.hpp"

using namespace less;
using namespace less::eval;
namespace fs = std::filesystem;

namespace {

std::vector<SlideRecord> corpus(int nb, int na, int ns, int nm) {
  std::vector<SlideRecord> out;
  auto add = [&](Subtype s, int n, const char* p) {
    for (int i = 0; i < n; ++i) {
      SlideRecord r;
      r.id = std::string(p) + std::to_string(i);
      r.subtype = s;
      r.coarse_label = coarse_label_of(s);
      out.push_back(r);
    }
  };
  add(Subtype::kBenign, nb, "b");
  add(Subtype::kAtypical, na, "a");
  add(Subtype::kSuspicious, ns, "s");
  add(Subtype::kMalignant, nm, "m");
  return out;
}

TEST(Auc, ClassicExample) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(compute_metrics(s, y).auc, 75.0);
}

TEST(Auc, TiesCountHalfAndSingleClassIsNaN) {
  const std::vector<double> s{0.5, 0.5};
  const std::vector<int> y{0, 1};
  EXPECT_DOUBLE_EQ(auc(s, y), 0.5);
  const std::vector<int> one{1, 1};
  EXPECT_TRUE(std::isnan(auc(s, one)));
}

TEST(Metrics, ThresholdAndUndefinedRates) {
  const std::vector<double> s{0.2, 0.6, 0.5, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  const auto m = compute_metrics(s, y);
  EXPECT_DOUBLE_EQ(m.accuracy, 75.0);
  EXPECT_DOUBLE_EQ(m.sensitivity, 100.0);
  EXPECT_DOUBLE_EQ(m.specificity, 50.0);
  const std::vector<int> neg{0, 0, 0, 0};
  EXPECT_TRUE(std::isnan(compute_metrics(s, neg).sensitivity));
}

TEST(Splits, TrainCountsFollowSeventyPercent) {
  const auto [b, m] = train_counts(42, 41);
  EXPECT_EQ(b + m, 58);
  EXPECT_EQ(b, 29);
  EXPECT_EQ(m, 29);
  const auto [b2, m2] = train_counts(50, 50);
  EXPECT_EQ(b2, 35);
  EXPECT_EQ(m2, 35);
}

TEST(Splits, IntermediateSubtypesAlwaysTest) {
  const auto c = corpus(42, 7, 9, 41);
  const auto splits = make_splits(c, 5, 11);
  ASSERT_EQ(splits.size(), 5u);
  std::set<std::string> train0(splits[0].train.begin(), splits[0].train.end());
  for (const auto& sp : splits) {
    EXPECT_EQ(sp.train.size(), 58u);
    EXPECT_EQ(sp.train.size() + sp.test.size(), c.size());
    for (const auto& id : sp.train) EXPECT_TRUE(id[0] == 'b' || id[0] == 'm');
    std::set<std::string> all(sp.train.begin(), sp.train.end());
    all.insert(sp.test.begin(), sp.test.end());
    EXPECT_EQ(all.size(), c.size());
  }
  std::set<std::string> train1(splits[1].train.begin(), splits[1].train.end());
  EXPECT_NE(train0, train1);
  EXPECT_EQ(make_splits(c, 5, 11)[3].train, splits[3].train);
}

TEST(Splits, MissingSubtypeWarns) {
  std::vector<std::string> warnings;
  make_splits(corpus(10, 0, 3, 10), 1, 0, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Splits, FileRoundTrip) {
  const auto splits = make_splits(corpus(5, 1, 1, 5), 2, 4);
  const auto path = fs::temp_directory_path() / "less_splits_test.tsv";
  write_splits(path, splits);
  const auto back = read_splits(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].train, splits[1].train);
  EXPECT_EQ(back[1].test, splits[1].test);
  EXPECT_EQ(back[1].split_seed, splits[1].split_seed);
  fs::remove(path);
}

TEST(Summary, PopulationStdIgnoringNaN) {
  const std::vector<double> v{1, 2, 3, 4, std::nan("")};
  const auto s = summarize_values(v);
  EXPECT_EQ(s.n, 4);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(1.25), 1e-12);
}

TEST(RunMatrix, FiftyRunsWithFailuresRecorded) {
  const auto splits = make_splits(corpus(10, 2, 2, 10), 5, 1);
  int calls = 0;
  const RunFn fn = [&](const std::string& strategy, const SplitPlan& sp, int seed) {
    ++calls;
    if (strategy == "bad" && seed == 3) throw std::runtime_error("boom");
    return RunOutput{{0.1, 0.9, 0.2 + 0.01 * sp.index}, {0, 1, 0}};
  };
  const auto runs = run_matrix({"good", "bad"}, splits, 5, fn);
  EXPECT_EQ(runs.size(), 50u);
  EXPECT_EQ(calls, 50);
  const auto rows = summarize(runs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].strategy, "good");
  EXPECT_EQ(rows[0].accuracy.n, 25);
  EXPECT_DOUBLE_EQ(rows[0].accuracy.mean, 100.0);
  EXPECT_DOUBLE_EQ(rows[0].accuracy.std, 0.0);
  EXPECT_EQ(rows[1].n_failed, 5);
  EXPECT_EQ(rows[1].accuracy.n, 20);
  for (const auto& r : runs) {
    if (!r.ok) {
      EXPECT_EQ(r.error, "boom");
    }
  }
  const auto table = format_table(rows);
  EXPECT_NE(table.find("good"), std::string::npos);
}

TEST(Predictions, RoundTrip) {
  const std::vector<PredictionRecord> p{{"s1", 0.25, 0}, {"s2", 0.875, 1}};
  const auto path = fs::temp_directory_path() / "less_pred_test.jsonl";
  write_predictions(path, p);
  const auto back = read_predictions(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].slide_id, "s2");
  EXPECT_DOUBLE_EQ(back[1].p_high_risk, 0.875);
  EXPECT_EQ(back[1].label, 1);
  fs::remove(path);
}

}  // namespace
