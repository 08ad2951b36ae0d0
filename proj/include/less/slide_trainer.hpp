#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "less/nn/optim.hpp"
#include "less/vpu.hpp"

namespace less {

/// Optimisation settings shared by every slide-level aggregator.
struct SlideTrainConfig {
  int epochs = 40;
  int batch_size = 128;
  double lr = 1e-6;
  double lr_end = 5e-7;
  int warmup_epochs = 5;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || !(lr_end > 0.0)) throw ConfigError("learning rates must be positive");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

struct LabeledSlide {
  const vpu::SlideEmbedding* embedding = nullptr;
  int label = 0;  // label_index(): 0 low risk, 1 high risk
};

struct SlideEpochLog {
  int epoch = 0;  // 1-based
  double loss = 0;
  double lr = 0;
};

/// -log softmax(logits)[label] and its gradient w.r.t. the logits (1 x 2).
template <class T>
T cross_entropy(const nn::Matrix<T>& logits, int label, nn::Matrix<T>* dlogits = nullptr) {
  const nn::Matrix<T> lp = nn::log_softmax_rows(logits);
  if (dlogits) {
    *dlogits = lp.array().exp().matrix();
    (*dlogits)(0, label) -= T(1);
  }
  return -lp(0, label);
}

/// Minibatch Adam on slide-level cross-entropy. Slides are processed one at
/// a time (token counts may differ) with gradients accumulated over the
/// batch. `Model` provides
///
///   nn::Matrix<float> logits(small, large, ctx, cache)   // 1 x 2
///   void backward(cache, dlogits)
///   nn::ParamRefs<float> parameters()
///
/// Deterministic in cfg.seed. Throws DivergenceError on a non-finite loss.
template <class Model>
std::vector<SlideEpochLog> train_slide_model(Model& model, std::span<const LabeledSlide> data,
                                             const SlideTrainConfig& cfg,
                                             const std::function<void(const SlideEpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("no training slides");
  nn::Adam<float> opt(model.parameters(), {.weight_decay = cfg.weight_decay});
  const nn::WarmupCosineSchedule sched{cfg.lr, cfg.lr_end, cfg.warmup_epochs, cfg.epochs};
  Rng rng(derive_seed(cfg.seed, "slide-trainer"));
  nn::Context ctx{true, &rng};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<SlideEpochLog> logs;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = sched.at(epoch);
    shuffle(order, rng);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      opt.zero_grad();
      for (std::size_t j = start; j < start + n; ++j) {
        const LabeledSlide& s = data[order[j]];
        typename Model::Cache cache;
        const auto logits = model.logits(s.embedding->small, s.embedding->large, ctx, cache);
        nn::Matrix<float> d;
        const double loss = cross_entropy<float>(logits, s.label, &d);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "slide-level loss diverged at epoch " << epoch + 1 << " on slide '" << s.embedding->slide_id
              << "' (lr=" << lr << ")";
          throw DivergenceError(msg.str());
        }
        total += loss;
        model.backward(cache, d / static_cast<float>(n));
      }
      opt.step(lr);
    }
    logs.push_back({epoch + 1, total / static_cast<double>(data.size()), lr});
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

/// Eval-mode probability of the high-risk class.
template <class Model>
double predict_probability(const Model& model, const vpu::SlideEmbedding& e) {
  typename Model::Cache cache;
  const auto logits = model.logits(e.small, e.large, nn::Context{}, cache);
  const auto p = nn::softmax_rows(logits);
  return static_cast<double>(p(0, 1));
}

}  // namespace less
