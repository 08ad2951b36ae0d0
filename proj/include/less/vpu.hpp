#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "less/nn/encoder.hpp"
#include "less/nn/tensor.hpp"
#include "less/patch_archive.hpp"

namespace less::vpu {

using nn::Matrix;

/// Probabilities are clamped to [kPhiFloor, 1] before logs are taken.
inline constexpr double kPhiFloor = 1e-6;

/// log(mean(phi_unlabeled)) - mean(log(phi_positive)).
/// Throws std::domain_error for empty inputs or values outside (0, 1].
double variational_loss(std::span<const double> phi_unlabeled, std::span<const double> phi_positive);

/// mean((log(gamma + (1 - gamma) * phi_unlabeled) - log(phi_mixed))^2) with
/// both probabilities clamped to [kPhiFloor, 1]. `phi_unlabeled[i]` is the
/// prediction on the i-th unlabeled sample and `phi_mixed[i]` the prediction
/// on its mixture with the i-th positive sample.
double mixup_consistency(std::span<const double> phi_unlabeled, std::span<const double> phi_mixed, double gamma);

/// Maps a batch of inputs (one per row) to probabilities of the positive
/// (benign) class.
using PhiFn = std::function<std::vector<double>(const Matrix<double>&)>;

struct MixupResult {
  double value = 0;
  double gamma = 0;
};

/// Draws gamma ~ Beta(alpha, alpha), mixes x_positive and x_unlabeled row by
/// row and evaluates the consistency penalty.
MixupResult mixup_regularizer(const Matrix<double>& x_positive, const Matrix<double>& x_unlabeled,
                              const PhiFn& phi, double alpha, Rng& rng);

/// Same with a fixed mixing coefficient.
MixupResult mixup_regularizer_at(const Matrix<double>& x_positive, const Matrix<double>& x_unlabeled,
                                 const PhiFn& phi, double gamma);

/// L_var + lambda * L_reg; returns `l_var` unchanged when lambda is 0.
double vpu_objective(double l_var, double l_reg, double lambda);

enum class Objective : std::uint8_t {
  kVariational,   // positive-unlabeled, no class prior
  kSupervisedPN,  // every patch takes its slide label (baseline)
};

/// Stage-1 optimisation settings.
struct VpuTrainConfig {
  int batch_size = 100;
  int epochs = 10;
  double lr = 1e-4;
  double lr_end = 1.25e-5;
  double lr_gamma = 0.5;
  int lr_step_epochs = 2;
  double alpha = 0.3;
  double lambda = 0.03;
  std::uint64_t seed = 0;
  Objective objective = Objective::kVariational;
  /// Epochs (1-based) after which a copy of the model is kept.
  std::vector<int> snapshot_epochs;

  void validate() const;
};

/// Patches of one scale, stored as contiguous 8-bit RGB.
class PatchBank {
 public:
  explicit PatchBank(int px = ingest::kSmallPatchPx) : px_(px) {}

  int px() const { return px_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  void add(const cv::Mat& rgb);

  /// Rows in `indices` order, CHW, normalized to roughly [-2, 2].
  template <class T>
  Matrix<T> batch(std::span<const std::size_t> indices) const;

  cv::Mat image(std::size_t i) const;

 private:
  int px_;
  std::size_t count_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Converts RGB patches into an encoder input batch (same normalization as
/// PatchBank::batch).
template <class T>
Matrix<T> images_to_batch(std::span<const cv::Mat> images);

/// Positive set: patches of benign slides. Unlabeled set: patches of
/// malignant slides.
struct PuSets {
  PatchBank positive;
  PatchBank unlabeled;
};

/// Builds the two sets for one scale from per-slide archives.
PuSets make_pu_sets(std::span<const PatchArchive> benign, std::span<const PatchArchive> malignant, bool large_scale);

struct EpochLog {
  int epoch = 0;  // 1-based
  double l_var = 0;
  double l_reg = 0;
  double total = 0;
  double lr = 0;
};

struct TrainedEncoder {
  nn::EncoderNet<float> model;
  std::vector<EpochLog> log;
  std::vector<std::pair<int, nn::EncoderNet<float>>> snapshots;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one encoder. Throws DivergenceError on a non-finite loss.
TrainedEncoder train_encoder(const PuSets& sets, const nn::EncoderSpec& spec, const VpuTrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

/// Per-patch probability of the malignant class, exp(log_prob[1]).
std::vector<double> malignancy_scores(const nn::EncoderNet<float>& model, const PatchBank& bank);

/// Embeddings and class log-probabilities of one slide at both scales.
/// Row i of every matrix belongs to archive pair i.
struct SlideEmbedding {
  std::string slide_id;
  Matrix<float> small;           // k x small embed dim
  Matrix<float> large;           // k x large embed dim
  Matrix<float> log_prob_small;  // k x 2
  Matrix<float> log_prob_large;  // k x 2
};

SlideEmbedding export_embeddings(const nn::EncoderNet<float>& small_model,
                                 const nn::EncoderNet<float>& large_model, const PatchArchive& archive);

/// Checkpoint round trip for encoders (nncore container, kind "encoder").
void save_encoder(const std::filesystem::path& path, const nn::EncoderNet<float>& model,
                  const std::string& extra_config = {});
nn::EncoderNet<float> load_encoder(const std::filesystem::path& path);

}  // namespace less::vpu
