#pragma once

#include <array>
#include <string>
#include <vector>

#include "less/nn/conv.hpp"

namespace less::nn {

/// Architecture of the patch encoder: four convolutions (ReLU after each),
/// then three linear layers. The embedding is the ReLU output of the second
/// linear layer, i.e. the input of the final classifier layer, which feeds a
/// 2-way LogSoftmax (index 0 = benign, index 1 = malignant).
struct EncoderSpec {
  Index input_px = 128;
  std::array<Index, 4> channels{8, 16, 16, 32};
  std::array<Index, 4> kernels{4, 3, 3, 3};
  std::array<Index, 4> strides{4, 2, 2, 2};
  std::array<Index, 4> pads{0, 1, 1, 1};
  Index hidden = 128;
  Index embed_dim = 384;

  /// Encoder for 128x128 patches producing 384-d embeddings.
  static EncoderSpec small_scale() { return {}; }

  /// Encoder for 256x256 patches producing 768-d embeddings. The stem
  /// downsamples 8x so both encoders share the trunk geometry.
  static EncoderSpec large_scale() {
    EncoderSpec s;
    s.input_px = 256;
    s.kernels[0] = 8;
    s.strides[0] = 8;
    s.embed_dim = 768;
    return s;
  }

  std::vector<ConvGeometry> conv_geometries() const {
    std::vector<ConvGeometry> g;
    Index c = 3, size = input_px;
    for (int i = 0; i < 4; ++i) {
      ConvGeometry geo{c, size, channels[i], kernels[i], strides[i], pads[i]};
      g.push_back(geo);
      c = channels[i];
      size = geo.out_size();
    }
    return g;
  }

  Index flat_dim() const { return conv_geometries().back().out_numel(); }
  Index input_numel() const { return 3 * input_px * input_px; }

  std::string to_string() const;
  static EncoderSpec from_string(const std::string& text);
};

template <class T>
class EncoderNet {
 public:
  static constexpr Index kClasses = 2;
  static constexpr Index kBenign = 0;
  static constexpr Index kMalignant = 1;

  struct Cache {
    const Matrix<T>* input = nullptr;  // must outlive backward()
    std::array<Matrix<T>, 4> conv_out;  // post-ReLU
    Matrix<T> hidden;                   // post-ReLU
    Matrix<T> embedding;                // post-ReLU
    Matrix<T> log_prob;
  };

  struct Output {
    Matrix<T> embedding;  // batch x embed_dim
    Matrix<T> log_prob;   // batch x 2
  };

  EncoderNet() = default;
  EncoderNet(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
    const auto geos = spec.conv_geometries();
    for (int i = 0; i < 4; ++i) convs[i] = Conv2d<T>("conv" + std::to_string(i + 1), geos[i], rng);
    fc1 = Linear<T>("fc1", spec.flat_dim(), spec.hidden, rng, Init::kKaimingUniform);
    fc2 = Linear<T>("fc2", spec.hidden, spec.embed_dim, rng, Init::kKaimingUniform);
    fc3 = Linear<T>("fc3", spec.embed_dim, kClasses, rng, Init::kKaimingUniform);
  }

  const EncoderSpec& spec() const { return spec_; }

  /// x: batch x (3*input_px*input_px), CHW per row.
  Output forward(const Matrix<T>& x, Cache* cache = nullptr) const {
    if (x.cols() != spec_.input_numel()) {
      throw ShapeError("encoder expects " + std::to_string(spec_.input_px) + "x" +
                       std::to_string(spec_.input_px) + " RGB input");
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = &x;
    const Matrix<T>* a = &x;
    for (int i = 0; i < 4; ++i) {
      c.conv_out[i] = relu(convs[i].forward(*a));
      a = &c.conv_out[i];
    }
    c.hidden = relu(fc1.forward(*a));
    c.embedding = relu(fc2.forward(c.hidden));
    c.log_prob = log_softmax_rows(fc3.forward(c.embedding));
    return {c.embedding, c.log_prob};
  }

  /// Backpropagates dL/dlog_prob (and optionally dL/dembedding) into the
  /// parameter gradients.
  void backward(const Cache& c, const Matrix<T>& dlog_prob, const Matrix<T>* dembedding = nullptr) {
    const Matrix<T> dlogits = log_softmax_rows_backward(c.log_prob, dlog_prob);
    Matrix<T> demb = fc3.backward(c.embedding, dlogits);
    if (dembedding) demb += *dembedding;
    Matrix<T> dh = fc2.backward(c.hidden, relu_backward(c.embedding, demb));
    Matrix<T> da = fc1.backward(c.conv_out[3], relu_backward(c.hidden, dh));
    for (int i = 3; i >= 0; --i) {
      const Matrix<T>& in = i == 0 ? *c.input : c.conv_out[i - 1];
      da = convs[i].backward(in, relu_backward(c.conv_out[i], da), i > 0);
    }
  }

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    for (auto& conv : convs) conv.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    fc3.collect(out);
    return out;
  }

  std::array<Conv2d<T>, 4> convs;
  Linear<T> fc1, fc2, fc3;

 private:
  EncoderSpec spec_;
};

}  // namespace less::nn
