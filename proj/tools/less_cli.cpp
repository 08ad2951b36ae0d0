// Command-line driver. Every stage reads and writes files inside one run
// directory, so stages can be rerun or inspected independently.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "less/errors.hpp"
#include "less/log.hpp"
#include "less/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = less::pipeline;

namespace {

struct Common {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  std::string run_dir;
  bool force = false;
};

struct Selection {
  int split = -1;
  int seed = -1;
  std::vector<std::string> strategies;
};

void add_common(CLI::App* cmd, Common& c, bool with_run = true) {
  cmd->add_option("-c,--config", c.config_files, "INI config file (repeatable; later files win)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override one key, e.g. --set stage1.epochs=4 (repeatable)");
  if (with_run) cmd->add_option("--run", c.run_dir, "Run directory (default: latest run for this config)");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

// defaults < run's stored config (--run) < -c files < environment < --set
less::RunConfig resolve_config(const Common& c) {
  less::RunConfig cfg;
  if (!c.run_dir.empty()) {
    const auto stored = pl::Layout(c.run_dir).config();
    if (!fs::exists(stored)) throw less::MissingArtifactError("no config.ini in " + c.run_dir, "synth-gen");
    cfg.merge_file(stored);
  }
  for (const auto& f : c.config_files) cfg.merge_file(f);
  cfg.merge_environment();
  for (const auto& s : c.sets) cfg.set_assignment(s);
  cfg.validate();
  return cfg;
}

fs::path run_dir_for(const Common& c, const less::RunConfig& cfg) {
  if (!c.run_dir.empty()) {
    if (!fs::is_directory(c.run_dir)) throw less::MissingArtifactError("run directory " + c.run_dir + " not found", "synth-gen");
    return c.run_dir;
  }
  return pl::latest_run(cfg.get("run.root"), cfg);
}

std::vector<less::eval::SplitPlan> selected_splits(const pl::Layout& layout, const Selection& sel) {
  return pl::load_splits(layout, sel.split >= 0 ? std::optional<int>(sel.split) : std::nullopt);
}

std::vector<int> selected_seeds(const less::RunConfig& cfg, const Selection& sel) {
  if (sel.seed >= 0) return {sel.seed};
  std::vector<int> seeds(static_cast<std::size_t>(cfg.eval().n_seeds));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = static_cast<int>(i);
  return seeds;
}

void train_strategies(const less::RunConfig& cfg, const pl::Layout& layout, const Selection& sel,
                      const std::vector<std::string>& names, bool force) {
  for (const auto& split : selected_splits(layout, sel)) {
    for (const auto& name : names) {
      const auto strategy = less::parse_strategy(name);
      for (int seed : selected_seeds(cfg, sel)) {
        less::log::info("train ", name, " split ", split.index, " seed ", seed);
        pl::train_strategy(cfg, layout, strategy, split, seed, force);
      }
    }
  }
}

int report(const pl::EvaluateOutput& out) {
  std::cout << out.table;
  int failed = 0;
  for (const auto& r : out.runs) failed += r.ok ? 0 : 1;
  if (failed > 0) {
    std::cerr << failed << " run(s) failed; see runs.tsv\n";
    return static_cast<int>(less::ExitCode::kFailure);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"less: two-stage multi-scale slide classification on synthetic cytology slides"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  Common c;
  Selection sel;
  int k_top = 3;
  std::vector<std::string> slides;
  std::string sweep_key;
  std::vector<std::string> sweep_values;

  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic corpus in a new run directory");
  add_common(synth, c, false);

  auto* ingest = app.add_subcommand("ingest", "Tile, filter and sample patch pairs; plan train/test splits");
  add_common(ingest, c);

  auto* stage1 = app.add_subcommand("train-stage1", "Train the small- and large-scale patch encoders");
  add_common(stage1, c);
  stage1->add_option("--split", sel.split, "Only this split");

  auto* embed = app.add_subcommand("embed", "Export patch embeddings with the stage-1 encoders");
  add_common(embed, c);
  embed->add_option("--split", sel.split, "Only this split");

  auto* stage2 = app.add_subcommand("train-stage2", "Train the cross-attention fusion model");
  add_common(stage2, c);
  stage2->add_option("--split", sel.split, "Only this split");
  stage2->add_option("--seed", sel.seed, "Only this seed index");

  auto* baseline = app.add_subcommand("train-baseline", "Train slide-level baselines");
  add_common(baseline, c);
  baseline->add_option("--split", sel.split, "Only this split");
  baseline->add_option("--seed", sel.seed, "Only this seed index");
  baseline->add_option("--strategy", sel.strategies, "counting, mlp, gnn, vit or fused_gnn (default: all)");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions and write the results table");
  add_common(evaluate, c);
  evaluate->add_option("--strategy", sel.strategies, "Strategies to report (default: eval.strategies)");

  auto* explain = app.add_subcommand("explain", "Export the top-attended patches of test slides");
  add_common(explain, c);
  explain->add_option("--split", sel.split, "Split (default 0)");
  explain->add_option("--seed", sel.seed, "Seed whose checkpoint to use (default 0)");
  explain->add_option("--slide", slides, "Slide id (repeatable; default: all test slides)");
  explain->add_option("-k,--top", k_top, "Patches per scale")->check(CLI::PositiveNumber);

  auto* run = app.add_subcommand("run", "synth-gen, ingest, both stages, baselines and evaluate in one go");
  add_common(run, c, false);

  auto* sweep = app.add_subcommand("sweep", "Rerun the pipeline for each value of one config key");
  add_common(sweep, c, false);
  sweep->add_option("key", sweep_key, "Config key, e.g. stage1.epochs or lambda")->required();
  sweep->add_option("values", sweep_values, "Comma-separated values")->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  less::log::set_quiet(quiet);

  try {
    const auto cfg = resolve_config(c);
    const fs::path root = cfg.get("run.root");

    if (synth->parsed()) {
      const auto dir = pl::create_run(root, cfg, c.force);
      pl::synth_gen(cfg, pl::Layout(dir), c.force);
      std::cout << dir.string() << '\n';
      return 0;
    }
    if (run->parsed()) {
      const auto dir = pl::create_run(root, cfg, c.force);
      const pl::Layout layout(dir);
      pl::synth_gen(cfg, layout, c.force);
      pl::ingest(cfg, layout, c.force);
      const int rc = report(pl::run_downstream(cfg, layout, c.force));
      std::cout << "run directory: " << dir.string() << '\n';
      return rc;
    }
    if (sweep->parsed()) {
      const auto dir = pl::create_run(root, cfg, c.force);
      const auto key = cfg.resolve_key(sweep_key);
      const auto points = pl::sweep(cfg, key, sweep_values, dir / ("sweep-" + key), c.force);
      std::cout << pl::format_sweep_table(points) << "sweep directory: " << (dir / ("sweep-" + key)).string() << '\n';
      return 0;
    }

    const pl::Layout layout(run_dir_for(c, cfg));
    if (ingest->parsed()) {
      const auto s = pl::ingest(cfg, layout, c.force);
      std::cout << s.n_slides << " slides, " << s.n_unusable << " unusable, " << s.n_augmented_slides
                << " augmented\n";
    } else if (stage1->parsed()) {
      for (const auto& split : selected_splits(layout, sel)) pl::train_stage1(cfg, layout, split, c.force);
    } else if (embed->parsed()) {
      for (const auto& split : selected_splits(layout, sel)) pl::embed(cfg, layout, split, c.force);
    } else if (stage2->parsed()) {
      train_strategies(cfg, layout, sel, {"less"}, c.force);
    } else if (baseline->parsed()) {
      auto names = sel.strategies;
      if (names.empty()) names = {"counting", "mlp", "gnn", "vit", "fused_gnn"};
      for (const auto& n : names) {
        if (n == "less") throw less::ConfigError("'less' is trained by train-stage2");
      }
      train_strategies(cfg, layout, sel, names, c.force);
    } else if (evaluate->parsed()) {
      const auto names = sel.strategies.empty() ? cfg.eval().strategies : sel.strategies;
      for (const auto& n : names) less::parse_strategy(n);
      return report(pl::evaluate(cfg, layout, names, layout.eval_dir()));
    } else if (explain->parsed()) {
      const auto splits = pl::load_splits(layout, sel.split >= 0 ? sel.split : 0);
      pl::explain(cfg, layout, splits.front(), sel.seed >= 0 ? sel.seed : 0, slides, k_top, layout.explain_dir());
      std::cout << layout.explain_dir().string() << '\n';
    }
    return 0;
  } catch (const less::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return static_cast<int>(less::ExitCode::kConfig);
  } catch (const less::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return static_cast<int>(less::ExitCode::kMissingArtifact);
  } catch (const less::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return static_cast<int>(less::ExitCode::kDivergence);
  } catch (const pl::OutputExistsError& e) {
    std::cerr << e.what() << '\n';
    return static_cast<int>(less::ExitCode::kFailure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(less::ExitCode::kFailure);
  }
}
