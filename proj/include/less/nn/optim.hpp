#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "less/nn/tensor.hpp"

namespace less::nn {

template <class T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(ParamRefs<T> params) : Adam(std::move(params), Options{}) {}
  Adam(ParamRefs<T> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() { zero_grads(params_); }

  void step(double lr) {
    ++t_;
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(opt_.beta1, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(opt_.beta2, t_));
    const T step_size = static_cast<T>(lr) / c1;
    const T eps = static_cast<T>(opt_.eps);
    const T wd = static_cast<T>(opt_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      Matrix<T> g = p.grad;
      if (wd != T(0)) g += wd * p.value;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  ParamRefs<T> params_;
  Options opt_;
  std::vector<Matrix<T>> m_, v_;
  long t_ = 0;
};

/// lr = max(initial * gamma^floor(epoch / step_epochs), floor_lr).
struct StepSchedule {
  double initial = 1e-4;
  double gamma = 0.5;
  int step_epochs = 2;
  double floor_lr = 1.25e-5;

  double at(int epoch) const {
    const double lr = initial * std::pow(gamma, epoch / std::max(1, step_epochs));
    return std::max(lr, floor_lr);
  }
};

/// Linear warmup from initial/10 to initial over `warmup_epochs`, then
/// cosine decay from initial to final over the remaining epochs.
struct WarmupCosineSchedule {
  double initial = 1e-6;
  double final = 5e-7;
  int warmup_epochs = 5;
  int total_epochs = 40;

  double at(int epoch) const {
    if (epoch < warmup_epochs) {
      const double start = initial / 10.0;
      return start + (initial - start) * static_cast<double>(epoch) / warmup_epochs;
    }
    const int span = std::max(1, total_epochs - warmup_epochs - 1);
    const double t = std::min(1.0, static_cast<double>(epoch - warmup_epochs) / span);
    return final + 0.5 * (initial - final) * (1.0 + std::cos(std::numbers::pi * t));
  }
};

}  // namespace less::nn
