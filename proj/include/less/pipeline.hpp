#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "less/config.hpp"
#include "less/embeddings.hpp"
#include "less/evalkit.hpp"

namespace less::pipeline {

namespace fs = std::filesystem;

/// An output already exists and --force was not given.
class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File locations inside a run directory. Stages communicate only through
/// these files.
struct Layout {
  fs::path run;
  fs::path corpus_dir;   // synth-gen output
  fs::path patches_dir;  // ingest output

  explicit Layout(fs::path run_dir)
      : run(run_dir), corpus_dir(run_dir / "corpus"), patches_dir(run_dir / "patches") {}
  /// A run that reuses another run's corpus and patches.
  Layout(fs::path run_dir, const Layout& shared)
      : run(std::move(run_dir)), corpus_dir(shared.corpus_dir), patches_dir(shared.patches_dir) {}

  fs::path config() const { return run / "config.ini"; }
  fs::path manifest() const { return corpus_dir / "manifest.tsv"; }
  fs::path oracle() const { return corpus_dir / "oracle.tsv"; }
  fs::path patch_manifest() const { return patches_dir / "patches.tsv"; }
  fs::path splits() const { return run / "splits.tsv"; }
  fs::path split_dir(int split) const { return run / ("split-" + std::to_string(split)); }
  fs::path encoder(int split, bool large) const {
    return split_dir(split) / "stage1" / (large ? "encoder_l.ckpt" : "encoder_s.ckpt");
  }
  fs::path stage1_log(int split, bool large) const {
    return split_dir(split) / "stage1" / (large ? "log_l.jsonl" : "log_s.jsonl");
  }
  fs::path embeddings(int split) const { return split_dir(split) / "embeddings"; }
  fs::path predictions(int split, const std::string& strategy, int seed) const {
    return split_dir(split) / "predictions" / (strategy + "-seed" + std::to_string(seed) + ".jsonl");
  }
  fs::path model(int split, const std::string& strategy, int seed) const {
    return split_dir(split) / "models" / (strategy + "-seed" + std::to_string(seed) + ".ckpt");
  }
  fs::path train_log(int split, const std::string& strategy, int seed) const {
    return split_dir(split) / "models" / (strategy + "-seed" + std::to_string(seed) + ".jsonl");
  }
  fs::path eval_dir() const { return run / "eval"; }
  fs::path explain_dir() const { return run / "explain"; }
};

// ---- run directories -------------------------------------------------------

/// Directories under `root` named `<hash>-<timestamp>`, oldest first.
std::vector<fs::path> find_runs(const fs::path& root, const std::string& hash);

/// Creates `<root>/<hash>-<timestamp>` and writes the resolved config.
/// Refuses (OutputExistsError) when a run with the same hash exists unless
/// `force` is set.
fs::path create_run(const fs::path& root, const RunConfig& cfg, bool force);

/// Latest run for the config's hash; MissingArtifactError otherwise.
fs::path latest_run(const fs::path& root, const RunConfig& cfg);

// ---- stages ----------------------------------------------------------------

void synth_gen(const RunConfig& cfg, const Layout& layout, bool force);

struct IngestSummary {
  int n_slides = 0;
  int n_unusable = 0;
  int n_augmented_slides = 0;
};
IngestSummary ingest(const RunConfig& cfg, const Layout& layout, bool force);

/// Partitions the usable slides and writes the split file.
std::vector<eval::SplitPlan> plan_splits(const RunConfig& cfg, const Layout& layout);

/// Splits listed in the split file, or only `only` when given.
std::vector<eval::SplitPlan> load_splits(const Layout& layout, std::optional<int> only = std::nullopt);

/// Trains both encoders of one split.
void train_stage1(const RunConfig& cfg, const Layout& layout, const eval::SplitPlan& split, bool force);

/// Exports embeddings of every usable slide for one split.
void embed(const RunConfig& cfg, const Layout& layout, const eval::SplitPlan& split, bool force);

/// Trains one slide-level strategy and writes test-set predictions.
void train_strategy(const RunConfig& cfg, const Layout& layout, Strategy strategy, const eval::SplitPlan& split,
                    int seed, bool force);

struct EvaluateOutput {
  std::vector<eval::RunRecord> runs;
  std::vector<eval::SummaryRow> rows;
  std::string table;
};

/// Scores every strategy x split x seed from prediction files. Missing
/// files are recorded as failed runs.
EvaluateOutput evaluate(const RunConfig& cfg, const Layout& layout, const std::vector<std::string>& strategies,
                        const fs::path& out_dir);

/// Exports the top-k attention patches of the given slides (all test slides
/// of the split when empty) using the `less` model of (split, seed).
void explain(const RunConfig& cfg, const Layout& layout, const eval::SplitPlan& split, int seed,
             const std::vector<std::string>& slide_ids, int k_top, const fs::path& out_dir);

/// Runs everything after the corpus stages, for every split and seed.
EvaluateOutput run_downstream(const RunConfig& cfg, const Layout& layout, bool force);

// ---- sweep -----------------------------------------------------------------

struct SweepPoint {
  std::string value;
  std::string label;  // row label in tables, e.g. "W/o regularization" for lambda = 0
  std::vector<eval::SummaryRow> rows;
};

/// One table over all points: rows labeled "<label> / <strategy>".
std::string format_sweep_table(const std::vector<SweepPoint>& points);

/// Evaluates the pipeline once per value of `key` (a full or bare key name). Corpus and patches are
/// shared between points when `key` does not affect them. Writes
/// sweep.tsv and one PNG per metric under `sweep_dir`.
std::vector<SweepPoint> sweep(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                              const fs::path& sweep_dir, bool force);

}  // namespace less::pipeline
