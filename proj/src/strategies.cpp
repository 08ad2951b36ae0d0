#include "less/strategies.hpp"

#include <algorithm>

#include "less/nn/checkpoint.hpp"

namespace less {

namespace {

using baselines::Scale;

template <class Model>
std::vector<double> fit_and_predict(Model& model, std::string_view kind, const StrategyConfig& cfg,
                                    const SlideTrainConfig& train_cfg, std::span<const LabeledSlide> train,
                                    std::span<const vpu::SlideEmbedding* const> test, std::uint64_t seed,
                                    const std::filesystem::path& checkpoint,
                                    const std::function<void(const SlideEpochLog&)>& on_epoch) {
  SlideTrainConfig tc = train_cfg;
  tc.seed = derive_seed(seed, "train");
  train_slide_model(model, train, tc, on_epoch);
  std::vector<double> out;
  out.reserve(test.size());
  for (const auto* e : test) out.push_back(predict_probability(model, *e));
  if (!checkpoint.empty()) {
    if constexpr (std::is_same_v<Model, fusion::FusionModel<float>>) {
      fusion::save_fusion(checkpoint, model);
    } else {
      nn::write_checkpoint(checkpoint, nn::make_checkpoint(std::string(kind), cfg.fusion.to_string(),
                                                            model.parameters()));
    }
  }
  return out;
}

nn::Index width(const vpu::SlideEmbedding& e, Scale s) {
  switch (s) {
    case Scale::kSmall: return e.small.cols();
    case Scale::kLarge: return e.large.cols();
    case Scale::kConcat: return e.small.cols() + e.large.cols();
  }
  return 0;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kLess: return "less";
    case Strategy::kCounting: return "counting";
    case Strategy::kMlp: return "mlp";
    case Strategy::kGnn: return "gnn";
    case Strategy::kVit: return "vit";
    case Strategy::kFusedGnn: return "fused_gnn";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::kLess, Strategy::kCounting, Strategy::kMlp, Strategy::kGnn, Strategy::kVit,
                 Strategy::kFusedGnn}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown strategy '" + std::string(s) + "' (less, counting, mlp, gnn, vit, fused_gnn)");
}

double counting_score(int count, int k, int threshold) {
  if (k < 1) throw std::invalid_argument("counting: no patches");
  if (count >= threshold) return 0.5 + 0.5 * (count - threshold) / std::max(1, k - threshold);
  return 0.5 * count / std::max(1, threshold);
}

std::vector<double> train_and_score(Strategy strategy, const StrategyConfig& cfg, std::span<const LabeledSlide> train,
                                    std::span<const vpu::SlideEmbedding* const> test, std::uint64_t seed,
                                    const std::filesystem::path& checkpoint,
                                    const std::function<void(const SlideEpochLog&)>& on_epoch) {
  if (train.empty()) throw ConfigError("no training slides");
  const auto& first = *train.front().embedding;
  Rng rng(derive_seed(seed, "init"));
  switch (strategy) {
    case Strategy::kLess: {
      fusion::FusionConfig fc = cfg.fusion;
      fc.in_small = first.small.cols();
      fc.in_large = first.large.cols();
      fusion::FusionModel<float> m(fc, rng);
      return fit_and_predict(m, "fusion", cfg, cfg.fusion_train, train, test, seed, checkpoint, on_epoch);
    }
    case Strategy::kCounting: {
      // Stage-1 head decisions only; nothing to train.
      std::vector<double> out;
      for (const auto* e : test) {
        const auto& lp = cfg.single_scale == Scale::kSmall ? e->log_prob_small : e->log_prob_large;
        out.push_back(counting_score(baselines::count_malignant(lp), static_cast<int>(lp.rows()),
                                     cfg.counting_threshold));
      }
      return out;
    }
    case Strategy::kMlp: {
      baselines::MlpAggregator<float> m(width(first, cfg.single_scale), cfg.single_scale, cfg.pooling, rng);
      return fit_and_predict(m, "mlp", cfg, cfg.baseline_train, train, test, seed, checkpoint, on_epoch);
    }
    case Strategy::kGnn:
    case Strategy::kFusedGnn: {
      const Scale s = strategy == Strategy::kGnn ? cfg.single_scale : Scale::kConcat;
      baselines::GcnAggregator<float> m(width(first, s), cfg.gnn_hidden, s, cfg.tau, rng);
      return fit_and_predict(m, to_string(strategy), cfg, cfg.baseline_train, train, test, seed, checkpoint,
                             on_epoch);
    }
    case Strategy::kVit: {
      const bool small = cfg.single_scale == Scale::kSmall;
      if (cfg.single_scale == Scale::kConcat) throw ConfigError("the single-scale ViT needs scale small or large");
      const auto& f = cfg.fusion;
      baselines::VitAggregator<float> m(width(first, cfg.single_scale), small ? f.dim_small : f.dim_large,
                                        small ? f.heads_small : f.heads_large, std::max(1, f.depth * f.n_cross),
                                        f.dropout, f.drop_path, cfg.single_scale, rng);
      return fit_and_predict(m, "vit", cfg, cfg.fusion_train, train, test, seed, checkpoint, on_epoch);
    }
  }
  throw ConfigError("unhandled strategy");
}

}  // namespace less
