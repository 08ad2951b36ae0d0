#pragma once

#include <cmath>
#include <vector>

#include "less/nn/layers.hpp"

namespace less::nn {

/// Output of multi-head scaled dot-product attention. `maps[h]` is the
/// (queries x keys) softmax matrix of head h.
template <class T>
struct AttentionOutput {
  Matrix<T> output;
  std::vector<Matrix<T>> maps;

  /// Head-averaged attention map.
  Matrix<T> mean_map() const {
    Matrix<T> m = maps.front();
    for (std::size_t h = 1; h < maps.size(); ++h) m += maps[h];
    return m / static_cast<T>(maps.size());
  }
};

template <class T>
struct AttentionGrads {
  Matrix<T> dq, dk, dv;
};

/// softmax(q_h k_h^T / sqrt(C/heads)) v_h per head, channels split evenly.
/// q: (Tq x C), k and v: (Tk x C).
template <class T>
AttentionOutput<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                             int heads) {
  const Index c = q.cols();
  if (k.cols() != c || v.cols() != c || k.rows() != v.rows()) {
    throw ShapeError("attention: q/k/v dimension mismatch");
  }
  if (heads < 1 || c % heads != 0) throw ShapeError("attention: channels not divisible by heads");
  const Index dh = c / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  AttentionOutput<T> out;
  out.output.resize(q.rows(), c);
  out.maps.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Matrix<T> logits = (qh * kh.transpose()) * scale;
    Matrix<T> p = softmax_rows(logits);
    out.output.middleCols(h * dh, dh).noalias() = p * vh;
    out.maps.push_back(std::move(p));
  }
  return out;
}

template <class T>
AttentionGrads<T> attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                     const std::vector<Matrix<T>>& maps, const Matrix<T>& dout) {
  const int heads = static_cast<int>(maps.size());
  const Index c = q.cols();
  const Index dh = c / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  AttentionGrads<T> g;
  g.dq.resize(q.rows(), c);
  g.dk.resize(k.rows(), c);
  g.dv.resize(v.rows(), c);
  for (int h = 0; h < heads; ++h) {
    const auto& p = maps[h];
    const auto doh = dout.middleCols(h * dh, dh);
    const Matrix<T> dp = doh * v.middleCols(h * dh, dh).transpose();
    g.dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
    const Matrix<T> dlogits = softmax_rows_backward(p, dp) * scale;
    g.dq.middleCols(h * dh, dh).noalias() = dlogits * k.middleCols(h * dh, dh);
    g.dk.middleCols(h * dh, dh).noalias() = dlogits.transpose() * q.middleCols(h * dh, dh);
  }
  return g;
}

/// Multi-head self-attention over all tokens (MSA).
template <class T>
class SelfAttention {
 public:
  struct Cache {
    Matrix<T> x;
    Matrix<T> qkv;
    AttentionOutput<T> attn;
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, Index dim, int heads, Rng& rng)
      : qkv(name + ".qkv", dim, 3 * dim, rng), proj(name + ".proj", dim, dim, rng), heads_(heads) {
    if (dim % heads != 0) throw ShapeError(name + ": dim not divisible by heads");
  }

  Index dim() const { return proj.in_features(); }
  int heads() const { return heads_; }

  Matrix<T> forward(const Matrix<T>& x, Cache& cache) const {
    const Index c = dim();
    cache.x = x;
    cache.qkv = qkv.forward(x);
    cache.attn = attention<T>(cache.qkv.leftCols(c), cache.qkv.middleCols(c, c),
                              cache.qkv.rightCols(c), heads_);
    return proj.forward(cache.attn.output);
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const Index c = dim();
    const Matrix<T> dattn = proj.backward(cache.attn.output, dy);
    const Matrix<T> q = cache.qkv.leftCols(c);
    const Matrix<T> k = cache.qkv.middleCols(c, c);
    const Matrix<T> v = cache.qkv.rightCols(c);
    auto g = attention_backward<T>(q, k, v, cache.attn.maps, dattn);
    Matrix<T> dqkv(cache.qkv.rows(), 3 * c);
    dqkv.leftCols(c) = g.dq;
    dqkv.middleCols(c, c) = g.dk;
    dqkv.rightCols(c) = g.dv;
    return qkv.backward(cache.x, dqkv);
  }

  void collect(ParamRefs<T>& out) {
    qkv.collect(out);
    proj.collect(out);
  }

  Linear<T> qkv;
  Linear<T> proj;

 private:
  int heads_ = 1;
};

/// Multi-head cross-attention (MCA) where only the first token is a query.
/// Keys and values come from every token of the input, so the attention
/// map has exactly one row per head.
template <class T>
class ClsCrossAttention {
 public:
  struct Cache {
    Matrix<T> x;
    Matrix<T> q, k, v;
    AttentionOutput<T> attn;
  };

  ClsCrossAttention() = default;
  ClsCrossAttention(const std::string& name, Index dim, int heads, Rng& rng)
      : wq(name + ".wq", dim, dim, rng),
        wk(name + ".wk", dim, dim, rng),
        wv(name + ".wv", dim, dim, rng),
        proj(name + ".proj", dim, dim, rng),
        heads_(heads) {
    if (dim % heads != 0) throw ShapeError(name + ": dim not divisible by heads");
  }

  Index dim() const { return proj.in_features(); }
  int heads() const { return heads_; }

  /// x: (1+N) x dim, row 0 is the query token. Returns 1 x dim.
  Matrix<T> forward(const Matrix<T>& x, Cache& cache) const {
    cache.x = x;
    cache.q = wq.forward(x.topRows(1));
    cache.k = wk.forward(x);
    cache.v = wv.forward(x);
    cache.attn = attention<T>(cache.q, cache.k, cache.v, heads_);
    return proj.forward(cache.attn.output);
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const Matrix<T> dattn = proj.backward(cache.attn.output, dy);
    auto g = attention_backward<T>(cache.q, cache.k, cache.v, cache.attn.maps, dattn);
    Matrix<T> dx = wk.backward(cache.x, g.dk);
    dx += wv.backward(cache.x, g.dv);
    dx.topRows(1) += wq.backward(cache.x.topRows(1), g.dq);
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    proj.collect(out);
  }

  Linear<T> wq, wk, wv, proj;

 private:
  int heads_ = 1;
};

}  // namespace less::nn
