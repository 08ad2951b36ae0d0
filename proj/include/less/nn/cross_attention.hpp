#pragma once

#include <string>
#include <utility>

#include "less/nn/attention.hpp"

namespace less::nn {

/// LayerNorm -> GELU -> Linear. Used to move a CLS token between branch widths.
template <class T>
class Projection {
 public:
  struct Cache {
    typename LayerNorm<T>::Cache ln;
    Matrix<T> normed, act;
  };

  Projection() = default;
  Projection(const std::string& name, Index in, Index out, Rng& rng)
      : norm(name + ".norm", in), linear(name + ".linear", in, out, rng) {}

  Index in_dim() const { return linear.in_features(); }
  Index out_dim() const { return linear.out_features(); }

  Matrix<T> forward(const Matrix<T>& x, Cache& c) const {
    c.normed = norm.forward(x, &c.ln);
    c.act = gelu(c.normed);
    return linear.forward(c.act);
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    return norm.backward(c.ln, gelu_backward(c.normed, linear.backward(c.act, dy)));
  }

  void collect(ParamRefs<T>& out) {
    norm.collect(out);
    linear.collect(out);
  }

  LayerNorm<T> norm;
  Linear<T> linear;
};

/// One direction of the cross-attention exchange. The CLS token of the own
/// branch is projected to the other branch's width (f), used as the single
/// query over [f(cls) ; other patch tokens], residually merged, and projected
/// back (g). Own patch tokens pass through untouched; there is no
/// feed-forward sublayer.
template <class T>
class CrossAttentionBranch {
 public:
  struct Cache {
    typename Projection<T>::Cache f, g;
    typename LayerNorm<T>::Cache ln;
    typename ClsCrossAttention<T>::Cache mca;
    Matrix<T> cls_proj, merged;
    Index n_other = 0;
  };

  CrossAttentionBranch() = default;
  CrossAttentionBranch(const std::string& name, Index own_dim, Index other_dim, int heads, Rng& rng)
      : f(name + ".f", own_dim, other_dim, rng),
        norm(name + ".norm", other_dim),
        mca(name + ".mca", other_dim, heads, rng),
        g(name + ".g", other_dim, own_dim, rng) {}

  Index own_dim() const { return f.in_dim(); }
  Index other_dim() const { return f.out_dim(); }

  /// x_own: (1+N) x own_dim, x_other: (1+M) x other_dim. Both have the CLS
  /// token in row 0.
  Matrix<T> forward(const Matrix<T>& x_own, const Matrix<T>& x_other, Cache& c) const {
    if (x_own.cols() != own_dim() || x_other.cols() != other_dim()) {
      throw ShapeError("cross-attention: branch width does not match projection");
    }
    if (x_own.rows() < 1 || x_other.rows() < 2) throw ShapeError("cross-attention: empty token set");
    c.n_other = x_other.rows() - 1;
    c.cls_proj = f.forward(x_own.topRows(1), c.f);
    Matrix<T> cat(1 + c.n_other, other_dim());
    cat.topRows(1) = c.cls_proj;
    cat.bottomRows(c.n_other) = x_other.bottomRows(c.n_other);
    c.merged = c.cls_proj + mca.forward(norm.forward(cat, &c.ln), c.mca);
    Matrix<T> z = x_own;
    z.topRows(1) = g.forward(c.merged, c.g);
    return z;
  }

  /// Head-averaged attention of the CLS query over [cls ; other patches].
  Matrix<T> attention_map(const Cache& c) const { return c.mca.attn.mean_map(); }

  /// Returns (dL/dx_own, dL/dx_other).
  std::pair<Matrix<T>, Matrix<T>> backward(const Cache& c, const Matrix<T>& dz) {
    Matrix<T> dx_own = dz;
    const Matrix<T> dmerged = g.backward(c.g, dz.topRows(1));
    const Matrix<T> dcat = norm.backward(c.ln, mca.backward(c.mca, dmerged));
    Matrix<T> dcls_proj = dmerged + dcat.topRows(1);
    dx_own.topRows(1) = f.backward(c.f, dcls_proj);
    Matrix<T> dx_other = Matrix<T>::Zero(1 + c.n_other, other_dim());
    dx_other.bottomRows(c.n_other) = dcat.bottomRows(c.n_other);
    return {std::move(dx_own), std::move(dx_other)};
  }

  void collect(ParamRefs<T>& out) {
    f.collect(out);
    norm.collect(out);
    mca.collect(out);
    g.collect(out);
  }

  Projection<T> f;
  LayerNorm<T> norm;
  ClsCrossAttention<T> mca;
  Projection<T> g;
};

/// Bidirectional exchange between a large-scale and a small-scale branch.
/// Both directions read the inputs as they were before the exchange.
template <class T>
class CrossAttentionModule {
 public:
  struct Cache {
    typename CrossAttentionBranch<T>::Cache large, small;
  };

  struct Output {
    Matrix<T> z_large, z_small;
    Matrix<T> attn_large_query;  // large CLS over [cls ; small patches]
    Matrix<T> attn_small_query;  // small CLS over [cls ; large patches]
  };

  CrossAttentionModule() = default;
  CrossAttentionModule(const std::string& name, Index dim_small, Index dim_large, int heads_small,
                       int heads_large, Rng& rng)
      : large(name + ".large", dim_large, dim_small, heads_small, rng),
        small(name + ".small", dim_small, dim_large, heads_large, rng) {}

  Output forward(const Matrix<T>& x_large, const Matrix<T>& x_small, Cache& c) const {
    Output out;
    out.z_large = large.forward(x_large, x_small, c.large);
    out.z_small = small.forward(x_small, x_large, c.small);
    out.attn_large_query = large.attention_map(c.large);
    out.attn_small_query = small.attention_map(c.small);
    return out;
  }

  /// Returns (dL/dx_large, dL/dx_small).
  std::pair<Matrix<T>, Matrix<T>> backward(const Cache& c, const Matrix<T>& dz_large,
                                           const Matrix<T>& dz_small) {
    auto [dl_own, ds_from_l] = large.backward(c.large, dz_large);
    auto [ds_own, dl_from_s] = small.backward(c.small, dz_small);
    return {dl_own + dl_from_s, ds_own + ds_from_l};
  }

  void collect(ParamRefs<T>& out) {
    large.collect(out);
    small.collect(out);
  }

  CrossAttentionBranch<T> large;
  CrossAttentionBranch<T> small;
};

}  // namespace less::nn
