#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/random.hpp"

namespace less::nn {

using Index = Eigen::Index;

/// Row-major dense matrix. Token sequences are stored one token per row;
/// image batches one image per row (CHW flattened).
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// A learnable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v) : name(std::move(n)), value(std::move(v)) {
    grad.setZero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

template <class T>
void zero_grads(const ParamRefs<T>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Forward-pass mode. Dropout and drop-path draw from `rng` only when
/// `training` is set.
struct Context {
  bool training = false;
  Rng* rng = nullptr;
};

template <class T>
Matrix<T> normal_matrix(Index rows, Index cols, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

/// Truncated at two standard deviations, as in common ViT initializers.
template <class T>
Matrix<T> trunc_normal_matrix(Index rows, Index cols, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    m.data()[i] = static_cast<T>(z * static_cast<double>(stddev));
  }
  return m;
}

template <class T>
Matrix<T> uniform_matrix(Index rows, Index cols, T bound, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(uniform(rng, -static_cast<double>(bound), static_cast<double>(bound)));
  }
  return m;
}

inline void expect_cols(Index got, Index want, const char* where) {
  if (got != want) {
    throw ShapeError(std::string(where) + ": expected " + std::to_string(want) + " columns, got " +
                     std::to_string(got));
  }
}

template <class T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

}  // namespace less::nn
