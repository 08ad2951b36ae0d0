#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "less/manifest.hpp"

namespace less::eval {

/// One train/test partition of a corpus.
struct SplitPlan {
  int index = 0;
  std::uint64_t split_seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Train: floor(0.7 * (#benign + #malignant)) slides, allotted to the two
/// subtypes by floor then largest remainder (ties to benign). Test: the
/// remaining benign and malignant slides plus every atypical and
/// suspicious slide. `warnings` receives one line per absent subtype.
std::vector<SplitPlan> make_splits(const std::vector<SlideRecord>& corpus, int n_splits = 5,
                                   std::uint64_t seed = 0, std::vector<std::string>* warnings = nullptr);

/// Number of training slides per class for n_benign/n_malignant slides.
std::pair<int, int> train_counts(int n_benign, int n_malignant, double fraction = 0.7);

void write_splits(const std::filesystem::path& path, const std::vector<SplitPlan>& splits);
std::vector<SplitPlan> read_splits(const std::filesystem::path& path);

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// Percentages. `auc` is NaN when only one class is present; sensitivity
/// (specificity) is NaN without positives (negatives).
struct Metrics {
  double accuracy = 0;
  double auc = kUndefined;
  double sensitivity = kUndefined;
  double specificity = kUndefined;
};

/// Mann-Whitney statistic as a fraction in [0, 1]; ties count one half.
/// labels: 1 = positive (high risk). NaN for a single-class label set.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Accuracy, AUC, sensitivity and specificity with score >= threshold
/// predicting the positive class.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct RunRecord {
  std::string strategy;
  int split = 0;
  int seed = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
};

struct MetricSummary {
  double mean = kUndefined;
  double std = kUndefined;  // population (ddof = 0) over all runs
  int n = 0;
};

struct SummaryRow {
  std::string strategy;
  MetricSummary accuracy, auc, sensitivity, specificity;
  int n_failed = 0;
};

/// Mean and population stddev over a list, ignoring NaN entries.
MetricSummary summarize_values(std::span<const double> values);

/// One row per strategy, in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs);

/// Produces per-slide scores for one run; throws on failure.
struct RunOutput {
  std::vector<double> scores;
  std::vector<int> labels;
};
using RunFn = std::function<RunOutput(const std::string& strategy, const SplitPlan& split, int seed)>;

/// Executes strategies x splits x seeds. A throwing run is recorded as
/// failed with its message and the matrix continues.
std::vector<RunRecord> run_matrix(const std::vector<std::string>& strategies, const std::vector<SplitPlan>& splits,
                                  int n_seeds, const RunFn& run, double threshold = 0.5);

/// Text table, one row per strategy, cells as mean(std).
std::string format_table(const std::vector<SummaryRow>& rows);

/// Tab-separated: strategy, metric, mean, std, n_runs.
void write_summary_tsv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

/// Tab-separated: strategy, split, seed, ok, accuracy, auc, sensitivity, specificity, error.
void write_runs_tsv(const std::filesystem::path& path, const std::vector<RunRecord>& runs);

/// Line-delimited prediction records: slide_id, p_high_risk, label.
struct PredictionRecord {
  std::string slide_id;
  double p_high_risk = 0;
  int label = 0;
};
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace less::eval
