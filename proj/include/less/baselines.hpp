#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "less/nn/transformer.hpp"
#include "less/slide_trainer.hpp"
#include "less/types.hpp"

namespace less::baselines {

using nn::Index;
using nn::Matrix;

/// Which embedding matrix an aggregator consumes.
enum class Scale : std::uint8_t { kSmall, kLarge, kConcat };
std::string_view to_string(Scale s);
Scale parse_scale(std::string_view s);

template <class T>
Matrix<T> select_scale(const Matrix<T>& small, const Matrix<T>& large, Scale s) {
  switch (s) {
    case Scale::kSmall: return small;
    case Scale::kLarge: return large;
    case Scale::kConcat: {
      if (small.rows() != large.rows()) throw ShapeError("cannot concatenate scales with different row counts");
      Matrix<T> c(small.rows(), small.cols() + large.cols());
      c << small, large;
      return c;
    }
  }
  return large;
}

// ---- counting -------------------------------------------------------------

/// Patches whose stage-1 argmax is the malignant class.
int count_malignant(const Matrix<float>& log_probs);

/// High risk iff at least `threshold` patches are predicted malignant.
CoarseLabel counting_classifier(const Matrix<float>& log_probs, int threshold = 50);

// ---- MLP ------------------------------------------------------------------

enum class Pooling : std::uint8_t { kMean, kMax };

/// Pooling over patches followed by one linear layer.
template <class T>
class MlpAggregator {
 public:
  struct Cache {
    Matrix<T> x, pooled;
  };

  MlpAggregator() = default;
  MlpAggregator(Index in_dim, Scale scale, Pooling pooling, Rng& rng)
      : head("mlp.head", in_dim, 2, rng, nn::Init::kKaimingUniform), scale_(scale), pooling_(pooling) {}

  Matrix<T> logits(const Matrix<T>& small, const Matrix<T>& large, const nn::Context&, Cache& c) const {
    c.x = select_scale(small, large, scale_);
    if (c.x.rows() < 1) throw ShapeError("mlp: no patches");
    if (pooling_ == Pooling::kMean) {
      c.pooled = c.x.colwise().mean();
    } else {
      c.pooled = c.x.colwise().maxCoeff();
    }
    return head.forward(c.pooled);
  }

  void backward(const Cache& c, const Matrix<T>& dlogits) { head.backward(c.pooled, dlogits, false); }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out;
    head.collect(out);
    return out;
  }

  nn::Linear<T> head;

 private:
  Scale scale_ = Scale::kLarge;
  Pooling pooling_ = Pooling::kMean;
};

// ---- graphs ---------------------------------------------------------------

struct GraphSpec {
  Index n = 0;
  std::vector<std::pair<Index, Index>> edges;  // i < j, no self-loops
  std::vector<bool> zero_norm;                 // rows excluded from edges
};

/// Edge (i, j), i != j, iff cos(e_i, e_j) > tau. Zero rows get no edges.
template <class T>
GraphSpec build_graph(const Matrix<T>& emb, double tau = 0.9) {
  GraphSpec g;
  g.n = emb.rows();
  g.zero_norm.assign(g.n, false);
  std::vector<double> norm(g.n);
  for (Index i = 0; i < g.n; ++i) {
    norm[i] = emb.row(i).template cast<double>().norm();
    g.zero_norm[i] = norm[i] == 0.0;
  }
  for (Index i = 0; i < g.n; ++i) {
    if (g.zero_norm[i]) continue;
    for (Index j = i + 1; j < g.n; ++j) {
      if (g.zero_norm[j]) continue;
      const double cos = emb.row(i).template cast<double>().dot(emb.row(j).template cast<double>()) / (norm[i] * norm[j]);
      if (cos > tau) g.edges.emplace_back(i, j);
    }
  }
  return g;
}

/// D^-1/2 (A + I) D^-1/2 as a dense matrix.
template <class T>
Matrix<T> normalized_adjacency(const GraphSpec& g) {
  Matrix<T> a = Matrix<T>::Identity(g.n, g.n);
  for (const auto& [i, j] : g.edges) a(i, j) = a(j, i) = T(1);
  const Matrix<T> d = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * a * d.asDiagonal();
}

/// Two graph convolutions (ReLU after each), mean readout, linear head.
template <class T>
class GcnAggregator {
 public:
  struct Cache {
    Matrix<T> adj, ax, h1, ah1, h2, readout;
  };

  GcnAggregator() = default;
  GcnAggregator(Index in_dim, Index hidden, Scale scale, double tau, Rng& rng)
      : gc1("gcn.gc1", in_dim, hidden, rng, nn::Init::kKaimingUniform),
        gc2("gcn.gc2", hidden, hidden, rng, nn::Init::kKaimingUniform),
        head("gcn.head", hidden, 2, rng, nn::Init::kKaimingUniform),
        scale_(scale),
        tau_(tau) {}

  Matrix<T> logits(const Matrix<T>& small, const Matrix<T>& large, const nn::Context&, Cache& c) const {
    const Matrix<T> x = select_scale(small, large, scale_);
    if (x.rows() < 1) throw ShapeError("gcn: no nodes");
    c.adj = normalized_adjacency<T>(build_graph(x, tau_));
    c.ax = c.adj * x;
    c.h1 = nn::relu(gc1.forward(c.ax));
    c.ah1 = c.adj * c.h1;
    c.h2 = nn::relu(gc2.forward(c.ah1));
    c.readout = c.h2.colwise().mean();
    return head.forward(c.readout);
  }

  void backward(const Cache& c, const Matrix<T>& dlogits) {
    const Matrix<T> dr = head.backward(c.readout, dlogits);
    const Matrix<T> dh2 = dr.replicate(c.h2.rows(), 1) / static_cast<T>(c.h2.rows());
    const Matrix<T> dah1 = gc2.backward(c.ah1, nn::relu_backward(c.h2, dh2));
    const Matrix<T> dh1 = c.adj.transpose() * dah1;
    gc1.backward(c.ax, nn::relu_backward(c.h1, dh1), false);
  }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out;
    gc1.collect(out);
    gc2.collect(out);
    head.collect(out);
    return out;
  }

  nn::Linear<T> gc1, gc2, head;

 private:
  Scale scale_ = Scale::kLarge;
  double tau_ = 0.9;
};

// ---- single-scale ViT -----------------------------------------------------

/// One transformer branch with a CLS token and no cross-attention.
template <class T>
class VitAggregator {
 public:
  struct Cache {
    Matrix<T> x;
    std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
    typename nn::LayerNorm<T>::Cache norm;
    Matrix<T> cls;
  };

  VitAggregator() = default;
  VitAggregator(Index in_dim, Index dim, int heads, int depth, double dropout, double drop_path, Scale scale,
                Rng& rng)
      : scale_(scale) {
    if (in_dim != dim) proj = nn::Linear<T>("vit.proj", in_dim, dim, rng);
    cls_token = nn::Parameter<T>("vit.cls", nn::trunc_normal_matrix<T>(1, dim, T(0.02), rng));
    for (int b = 0; b < depth; ++b) {
      blocks.emplace_back("vit.block" + std::to_string(b), dim, heads, T(4), static_cast<T>(dropout),
                          static_cast<T>(drop_path), rng);
    }
    norm = nn::LayerNorm<T>("vit.norm", dim);
    head = nn::Linear<T>("vit.head", dim, 2, rng);
  }

  Matrix<T> logits(const Matrix<T>& small, const Matrix<T>& large, const nn::Context& ctx, Cache& c) const {
    c.x = select_scale(small, large, scale_);
    if (c.x.rows() < 1) throw ShapeError("vit: no patches");
    Matrix<T> t(1 + c.x.rows(), cls_token.value.cols());
    t.topRows(1) = cls_token.value;
    t.bottomRows(c.x.rows()) = proj ? proj->forward(c.x) : c.x;
    c.blocks.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) t = blocks[b].forward(t, ctx, c.blocks[b]);
    c.cls = norm.forward(t.topRows(1), &c.norm);
    return head.forward(c.cls);
  }

  void backward(const Cache& c, const Matrix<T>& dlogits) {
    Matrix<T> dt = Matrix<T>::Zero(1 + c.x.rows(), cls_token.value.cols());
    dt.topRows(1) = norm.backward(c.norm, head.backward(c.cls, dlogits));
    for (std::size_t b = blocks.size(); b-- > 0;) dt = blocks[b].backward(c.blocks[b], dt);
    cls_token.grad += dt.topRows(1);
    if (proj) proj->backward(c.x, dt.bottomRows(c.x.rows()), false);
  }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out;
    if (proj) proj->collect(out);
    out.push_back(&cls_token);
    for (auto& b : blocks) b.collect(out);
    norm.collect(out);
    head.collect(out);
    return out;
  }

  std::optional<nn::Linear<T>> proj;
  nn::Parameter<T> cls_token;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
  nn::Linear<T> head;

 private:
  Scale scale_ = Scale::kLarge;
};

}  // namespace less::baselines
