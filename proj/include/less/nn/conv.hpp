#pragma once

#include <cmath>
#include <string>

#include "less/nn/layers.hpp"

namespace less::nn {

struct ConvGeometry {
  Index in_channels = 0;
  Index in_size = 0;  // square inputs
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 0;

  Index out_size() const { return (in_size + 2 * pad - kernel) / stride + 1; }
  Index in_numel() const { return in_channels * in_size * in_size; }
  Index out_numel() const { return out_channels * out_size() * out_size(); }
  Index patch_len() const { return in_channels * kernel * kernel; }
};

/// 2-D convolution on a batch stored as (batch x C*H*W), lowered to GEMM
/// per image via im2col.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, const ConvGeometry& geo, Rng& rng) : geo_(geo) {
    if (geo.out_size() < 1) throw ShapeError(name + ": kernel larger than padded input");
    const T fan_in = static_cast<T>(geo.patch_len());
    // He-uniform for ReLU networks.
    const T bound = std::sqrt(T(6) / fan_in);
    weight = Parameter<T>(name + ".weight",
                          uniform_matrix<T>(geo.out_channels, geo.patch_len(), bound, rng));
    bias = Parameter<T>(name + ".bias", Matrix<T>::Zero(1, geo.out_channels));
  }

  const ConvGeometry& geometry() const { return geo_; }

  Matrix<T> forward(const Matrix<T>& x) const {
    expect_cols(x.cols(), geo_.in_numel(), weight.name.c_str());
    const Index p = geo_.out_size() * geo_.out_size();
    Matrix<T> y(x.rows(), geo_.out_numel());
    Matrix<T> col(geo_.patch_len(), p);
    Matrix<T> out(geo_.out_channels, p);
    for (Index b = 0; b < x.rows(); ++b) {
      im2col(x.row(b).data(), col);
      out.noalias() = weight.value * col;
      out.colwise() += bias.value.row(0).transpose();
      y.row(b) = Eigen::Map<const RowVector<T>>(out.data(), out.size());
    }
    return y;
  }

  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy, bool need_dx = true) {
    const Index p = geo_.out_size() * geo_.out_size();
    Matrix<T> col(geo_.patch_len(), p);
    Matrix<T> dcol(geo_.patch_len(), p);
    Matrix<T> dx;
    if (need_dx) dx.setZero(x.rows(), x.cols());
    for (Index b = 0; b < x.rows(); ++b) {
      Eigen::Map<const Matrix<T>> dout(dy.row(b).data(), geo_.out_channels, p);
      im2col(x.row(b).data(), col);
      weight.grad.noalias() += dout * col.transpose();
      bias.grad.row(0) += dout.rowwise().sum().transpose();
      if (need_dx) {
        dcol.noalias() = weight.value.transpose() * dout;
        col2im(dcol, dx.row(b).data());
      }
    }
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter<T> weight;  // out_channels x (in_channels*k*k)
  Parameter<T> bias;

 private:
  void im2col(const T* img, Matrix<T>& col) const {
    const Index s = geo_.in_size, k = geo_.kernel, o = geo_.out_size();
    for (Index c = 0; c < geo_.in_channels; ++c) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          T* dst = col.row((c * k + ky) * k + kx).data();
          for (Index oy = 0; oy < o; ++oy) {
            const Index iy = oy * geo_.stride - geo_.pad + ky;
            for (Index ox = 0; ox < o; ++ox) {
              const Index ix = ox * geo_.stride - geo_.pad + kx;
              const bool inside = iy >= 0 && iy < s && ix >= 0 && ix < s;
              dst[oy * o + ox] = inside ? img[(c * s + iy) * s + ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix<T>& col, T* img) const {
    const Index s = geo_.in_size, k = geo_.kernel, o = geo_.out_size();
    for (Index c = 0; c < geo_.in_channels; ++c) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          const T* src = col.row((c * k + ky) * k + kx).data();
          for (Index oy = 0; oy < o; ++oy) {
            const Index iy = oy * geo_.stride - geo_.pad + ky;
            if (iy < 0 || iy >= s) continue;
            for (Index ox = 0; ox < o; ++ox) {
              const Index ix = ox * geo_.stride - geo_.pad + kx;
              if (ix < 0 || ix >= s) continue;
              img[(c * s + iy) * s + ix] += src[oy * o + ox];
            }
          }
        }
      }
    }
  }

  ConvGeometry geo_;
};

}  // namespace less::nn
