#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "less/baselines.hpp"
#include "less/fusion.hpp"

namespace less {

/// Slide-level aggregators compared in the evaluation matrix.
enum class Strategy : std::uint8_t { kLess, kCounting, kMlp, kGnn, kVit, kFusedGnn };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct StrategyConfig {
  fusion::FusionConfig fusion = fusion::FusionConfig::from_preset("base");
  SlideTrainConfig fusion_train;  // also used by the single-scale ViT
  SlideTrainConfig baseline_train{.epochs = 40, .batch_size = 16, .lr = 1e-3, .lr_end = 1e-4, .warmup_epochs = 0};
  int counting_threshold = 50;
  baselines::Scale single_scale = baselines::Scale::kLarge;
  baselines::Pooling pooling = baselines::Pooling::kMean;
  double tau = 0.9;
  nn::Index gnn_hidden = 128;
};

/// Maps a malignant-patch count to [0, 1] so that score >= 0.5 exactly when
/// count >= threshold; monotone in count.
double counting_score(int count, int k, int threshold);

/// Trains `strategy` on `train` and returns p(high risk) for every slide of
/// `test`, in order. Deterministic in `seed`. When `checkpoint` is nonempty
/// the trained model is written there.
std::vector<double> train_and_score(Strategy strategy, const StrategyConfig& cfg, std::span<const LabeledSlide> train,
                                    std::span<const vpu::SlideEmbedding* const> test, std::uint64_t seed,
                                    const std::filesystem::path& checkpoint = {},
                                    const std::function<void(const SlideEpochLog&)>& on_epoch = {});

}  // namespace less
