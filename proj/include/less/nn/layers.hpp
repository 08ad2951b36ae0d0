#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "less/nn/tensor.hpp"

namespace less::nn {

enum class Init {
  kTruncNormal,    // std 0.02, zero bias (transformer layers)
  kKaimingUniform  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias
};

/// y = x W + b, with W stored as (in x out).
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng, Init init = Init::kTruncNormal) {
    if (init == Init::kTruncNormal) {
      weight = Parameter<T>(name + ".weight", trunc_normal_matrix<T>(in, out, T(0.02), rng));
      bias = Parameter<T>(name + ".bias", Matrix<T>::Zero(1, out));
    } else {
      const T bound = T(1) / std::sqrt(static_cast<T>(in));
      weight = Parameter<T>(name + ".weight", uniform_matrix<T>(in, out, bound, rng));
      bias = Parameter<T>(name + ".bias", uniform_matrix<T>(1, out, bound, rng));
    }
  }

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  Matrix<T> forward(const Matrix<T>& x) const {
    expect_cols(x.cols(), in_features(), weight.name.c_str());
    Matrix<T> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx unless `need_dx` is false.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy, bool need_dx = true) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    if (!need_dx) return {};
    return dy * weight.value.transpose();
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter<T> weight;
  Parameter<T> bias;
};

/// Normalizes each row over its columns.
template <class T>
class LayerNorm {
 public:
  struct Cache {
    Matrix<T> xhat;
    Matrix<T> inv_std;  // rows x 1
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim, T eps = T(1e-6)) : eps_(eps) {
    gamma = Parameter<T>(name + ".weight", Matrix<T>::Ones(1, dim));
    beta = Parameter<T>(name + ".bias", Matrix<T>::Zero(1, dim));
  }

  Index dim() const { return gamma.value.cols(); }

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    expect_cols(x.cols(), dim(), gamma.name.c_str());
    const Index n = x.rows();
    const T c = static_cast<T>(x.cols());
    Matrix<T> xhat(n, x.cols());
    Matrix<T> inv(n, 1);
    for (Index i = 0; i < n; ++i) {
      const T mean = x.row(i).sum() / c;
      const auto centered = x.row(i).array() - mean;
      const T var = centered.square().sum() / c;
      inv(i, 0) = T(1) / std::sqrt(var + eps_);
      xhat.row(i) = centered * inv(i, 0);
    }
    Matrix<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv);
    }
    return y;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const auto& xhat = cache.xhat;
    gamma.grad.row(0) += (dy.array() * xhat.array()).matrix().colwise().sum();
    beta.grad.row(0) += dy.colwise().sum();
    const Matrix<T> dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
    const T c = static_cast<T>(dy.cols());
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Index i = 0; i < dy.rows(); ++i) {
      const T mean_d = dxhat.row(i).sum() / c;
      const T mean_dx = (dxhat.row(i).array() * xhat.row(i).array()).sum() / c;
      dx.row(i) = cache.inv_std(i, 0) *
                  (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx);
    }
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Parameter<T> gamma;
  Parameter<T> beta;

 private:
  T eps_ = T(1e-6);
};

/// Exact (erf) GELU.
template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); });
}

template <class T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  const Matrix<T> d = x.unaryExpr([inv_sqrt_2pi](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
  });
  return (dy.array() * d.array()).matrix();
}

template <class T>
Matrix<T> relu(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

/// Uses the forward output (y > 0 iff x > 0).
template <class T>
Matrix<T> relu_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  return (y.array() > T(0)).select(dy, T(0));
}

template <class T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    auto e = (x.row(i).array() - m).exp();
    y.row(i) = e / e.sum();
  }
  return y;
}

/// dL/dx given the softmax output `p` and dL/dp.
template <class T>
Matrix<T> softmax_rows_backward(const Matrix<T>& p, const Matrix<T>& dp) {
  Matrix<T> dx(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const T dot = (p.row(i).array() * dp.row(i).array()).sum();
    dx.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
  }
  return dx;
}

template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    const T lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  return y;
}

/// dL/dx given the log-softmax output `logp` and dL/dlogp.
template <class T>
Matrix<T> log_softmax_rows_backward(const Matrix<T>& logp, const Matrix<T>& dlogp) {
  Matrix<T> dx(logp.rows(), logp.cols());
  for (Index i = 0; i < logp.rows(); ++i) {
    const T s = dlogp.row(i).sum();
    dx.row(i) = dlogp.row(i).array() - logp.row(i).array().exp() * s;
  }
  return dx;
}

/// Inverted dropout. The mask (already scaled) is kept for backward.
template <class T>
class Dropout {
 public:
  explicit Dropout(T p = T(0)) : p_(p) {}

  Matrix<T> forward(const Matrix<T>& x, const Context& ctx, Matrix<T>* mask) const {
    if (!ctx.training || p_ <= T(0)) {
      if (mask) mask->resize(0, 0);
      return x;
    }
    Matrix<T> m(x.rows(), x.cols());
    const T keep = T(1) / (T(1) - p_);
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = uniform01(*ctx.rng) < static_cast<double>(p_) ? T(0) : keep;
    }
    Matrix<T> y = (x.array() * m.array()).matrix();
    if (mask) *mask = std::move(m);
    return y;
  }

  static Matrix<T> backward(const Matrix<T>& mask, const Matrix<T>& dy) {
    if (mask.size() == 0) return dy;
    return (dy.array() * mask.array()).matrix();
  }

  T rate() const { return p_; }

 private:
  T p_;
};

/// Stochastic depth for a single sample: returns the factor applied to a
/// residual branch (0, 1/(1-p) or 1 in eval mode).
template <class T>
T drop_path_scale(T p, const Context& ctx) {
  if (!ctx.training || p <= T(0)) return T(1);
  return uniform01(*ctx.rng) < static_cast<double>(p) ? T(0) : T(1) / (T(1) - p);
}

}  // namespace less::nn
