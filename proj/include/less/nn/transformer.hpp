#pragma once

#include <string>

#include "less/nn/attention.hpp"

namespace less::nn {

/// Two-layer feed-forward network with GELU and dropout after each layer.
template <class T>
class Mlp {
 public:
  struct Cache {
    Matrix<T> x, h_pre, h_act, h_drop, drop1, drop2;
  };

  Mlp() = default;
  Mlp(const std::string& name, Index dim, Index hidden, T dropout, Rng& rng)
      : fc1(name + ".fc1", dim, hidden, rng), fc2(name + ".fc2", hidden, dim, rng), drop_(dropout) {}

  Matrix<T> forward(const Matrix<T>& x, const Context& ctx, Cache& c) const {
    c.x = x;
    c.h_pre = fc1.forward(x);
    c.h_act = gelu(c.h_pre);
    c.h_drop = drop_.forward(c.h_act, ctx, &c.drop1);
    return drop_.forward(fc2.forward(c.h_drop), ctx, &c.drop2);
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    const Matrix<T> d2 = Dropout<T>::backward(c.drop2, dy);
    const Matrix<T> dh = Dropout<T>::backward(c.drop1, fc2.backward(c.h_drop, d2));
    return fc1.backward(c.x, gelu_backward(c.h_pre, dh));
  }

  void collect(ParamRefs<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }

  Linear<T> fc1, fc2;

 private:
  Dropout<T> drop_;
};

/// Pre-norm transformer encoder block:
///   x' = x + MSA(LN(x)),  out = x' + MLP(LN(x')).
/// No position embedding is added anywhere, so the block is equivariant to
/// token permutations.
template <class T>
class TransformerBlock {
 public:
  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2;
    typename SelfAttention<T>::Cache attn;
    typename Mlp<T>::Cache mlp;
    Matrix<T> x_mid;
    T path1 = T(1), path2 = T(1);
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Index dim, int heads, T mlp_ratio, T dropout,
                   T drop_path, Rng& rng)
      : norm1(name + ".norm1", dim),
        attn(name + ".attn", dim, heads, rng),
        norm2(name + ".norm2", dim),
        mlp(name + ".mlp", dim, static_cast<Index>(std::lround(static_cast<double>(dim) *
                                                                static_cast<double>(mlp_ratio))),
            dropout, rng),
        drop_path_(drop_path) {}

  Index dim() const { return norm1.dim(); }

  Matrix<T> forward(const Matrix<T>& x, const Context& ctx, Cache& c) const {
    if (!x.allFinite()) throw std::domain_error("transformer block: non-finite input");
    c.path1 = drop_path_scale(drop_path_, ctx);
    c.path2 = drop_path_scale(drop_path_, ctx);
    c.x_mid = x + c.path1 * attn.forward(norm1.forward(x, &c.ln1), c.attn);
    return c.x_mid + c.path2 * mlp.forward(norm2.forward(c.x_mid, &c.ln2), ctx, c.mlp);
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    Matrix<T> dmid = dy + norm2.backward(c.ln2, mlp.backward(c.mlp, c.path2 * dy));
    return dmid + norm1.backward(c.ln1, attn.backward(c.attn, c.path1 * dmid));
  }

  void collect(ParamRefs<T>& out) {
    norm1.collect(out);
    attn.collect(out);
    norm2.collect(out);
    mlp.collect(out);
  }

  LayerNorm<T> norm1;
  SelfAttention<T> attn;
  LayerNorm<T> norm2;
  Mlp<T> mlp;

 private:
  T drop_path_ = T(0);
};

}  // namespace less::nn
