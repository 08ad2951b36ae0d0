#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "less/evalkit.hpp"
#include "less/ingest.hpp"
#include "less/strategies.hpp"
#include "less/synthgen.hpp"
#include "less/vpu.hpp"

namespace less {

/// Evaluation protocol settings.
struct EvalSettings {
  int n_splits = 5;
  int n_seeds = 5;
  std::uint64_t split_seed = 0;
  double threshold = 0.5;
  std::vector<std::string> strategies;
};

/// Layered `section.key -> value` configuration. Every key has a built-in
/// default; layers applied later win:
///
///   defaults < INI file(s) < LESS_<SECTION>_<KEY> environment < --set flags
///
/// Unknown keys are rejected with ConfigError.
class RunConfig {
 public:
  static constexpr const char* kEnvPrefix = "LESS_";

  RunConfig();

  void merge_file(const std::filesystem::path& ini);
  void merge_ini_text(const std::string& text);
  /// Reads LESS_* variables from the process environment.
  void merge_environment();
  /// Applies one `section.key=value` assignment.
  void set_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  /// Full `section.key` for a bare key name when unambiguous ("lambda" ->
  /// "stage1.lambda"); full keys pass through. ConfigError otherwise.
  std::string resolve_key(const std::string& name) const;

  const std::string& get(const std::string& key) const;
  template <class T>
  T as(const std::string& key) const;
  bool has(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// INI text with every key, sections and keys sorted.
  std::string serialize() const;
  /// 16 hex digits of a stable hash of serialize().
  std::string hash() const;

  synth::SynthConfig synth() const;
  ingest::IngestConfig ingest() const;
  vpu::VpuTrainConfig stage1() const;
  nn::EncoderSpec encoder_spec(bool large_scale) const;
  StrategyConfig strategies() const;
  EvalSettings eval() const;

  /// Validates every typed view; throws ConfigError.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace less
