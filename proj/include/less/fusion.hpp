#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "less/nn/cross_attention.hpp"
#include "less/nn/transformer.hpp"
#include "less/patch_archive.hpp"
#include "less/slide_trainer.hpp"

namespace less::fusion {

using nn::Index;
using nn::Matrix;

struct FusionConfig {
  std::string preset = "base";
  Index dim_small = 384;
  Index dim_large = 768;
  Index in_small = 384;  // VPU embedding widths
  Index in_large = 768;
  int depth = 1;    // transformer blocks per branch before each exchange
  int n_cross = 1;  // number of exchanges
  int heads_small = 6;
  int heads_large = 12;
  double mlp_ratio = 4.0;
  double dropout = 0.1;
  double drop_path = 0.1;

  /// "tiny" (96/192), "small" (192/384) or "base" (384/768).
  static FusionConfig from_preset(const std::string& name);

  void validate() const;
  std::string to_string() const;
  static FusionConfig from_string(const std::string& text);
};

/// Dual-branch aggregator: per branch an optional input projection, a
/// learnable CLS token and `depth` transformer blocks, followed by a
/// cross-attention exchange, repeated `n_cross` times; then LayerNorm on
/// each CLS token and one linear head per branch. The prediction averages
/// the two heads' logits. No position embedding exists, so the output is
/// invariant to the order of patch rows.
template <class T>
class FusionModel {
 public:
  struct StageCache {
    std::vector<typename nn::TransformerBlock<T>::Cache> small, large;
    typename nn::CrossAttentionModule<T>::Cache cross;
  };

  struct Cache {
    Matrix<T> in_small, in_large;
    std::vector<StageCache> stages;
    typename nn::LayerNorm<T>::Cache norm_small, norm_large;
    Matrix<T> cls_small, cls_large;  // normalized CLS rows fed to the heads
    Matrix<T> logits_small, logits_large;
    Matrix<T> attn_small, attn_large;  // last exchange, 1 x (1+k)
  };

  FusionModel() = default;
  FusionModel(const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const T dp = static_cast<T>(cfg.dropout), dpath = static_cast<T>(cfg.drop_path);
    const T ratio = static_cast<T>(cfg.mlp_ratio);
    if (cfg.in_small != cfg.dim_small) proj_small = nn::Linear<T>("proj_s", cfg.in_small, cfg.dim_small, rng);
    if (cfg.in_large != cfg.dim_large) proj_large = nn::Linear<T>("proj_l", cfg.in_large, cfg.dim_large, rng);
    cls_small = nn::Parameter<T>("cls_s", nn::trunc_normal_matrix<T>(1, cfg.dim_small, T(0.02), rng));
    cls_large = nn::Parameter<T>("cls_l", nn::trunc_normal_matrix<T>(1, cfg.dim_large, T(0.02), rng));
    for (int s = 0; s < cfg.n_cross; ++s) {
      Stage st;
      const std::string p = "stage" + std::to_string(s);
      for (int b = 0; b < cfg.depth; ++b) {
        st.small.emplace_back(p + ".block_s" + std::to_string(b), cfg.dim_small, cfg.heads_small, ratio, dp,
                              dpath, rng);
        st.large.emplace_back(p + ".block_l" + std::to_string(b), cfg.dim_large, cfg.heads_large, ratio, dp,
                              dpath, rng);
      }
      st.cross = nn::CrossAttentionModule<T>(p + ".cross", cfg.dim_small, cfg.dim_large, cfg.heads_small,
                                             cfg.heads_large, rng);
      stages.push_back(std::move(st));
    }
    norm_small = nn::LayerNorm<T>("norm_s", cfg.dim_small);
    norm_large = nn::LayerNorm<T>("norm_l", cfg.dim_large);
    head_small = nn::Linear<T>("head_s", cfg.dim_small, 2, rng);
    head_large = nn::Linear<T>("head_l", cfg.dim_large, 2, rng);
  }

  const FusionConfig& config() const { return cfg_; }

  /// small: k x in_small, large: k x in_large, row-aligned. Returns the
  /// averaged logits (1 x 2).
  Matrix<T> logits(const Matrix<T>& small, const Matrix<T>& large, const nn::Context& ctx, Cache& c) const {
    if (small.rows() != large.rows() || small.rows() < 1) {
      throw ShapeError("fusion: scales must have the same nonzero number of patches");
    }
    nn::expect_cols(small.cols(), cfg_.in_small, "fusion small input");
    nn::expect_cols(large.cols(), cfg_.in_large, "fusion large input");
    c.in_small = small;
    c.in_large = large;
    Matrix<T> xs = tokens(small, proj_small, cls_small);
    Matrix<T> xl = tokens(large, proj_large, cls_large);
    c.stages.assign(stages.size(), {});
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const Stage& st = stages[s];
      StageCache& sc = c.stages[s];
      sc.small.resize(st.small.size());
      sc.large.resize(st.large.size());
      for (std::size_t b = 0; b < st.small.size(); ++b) xs = st.small[b].forward(xs, ctx, sc.small[b]);
      for (std::size_t b = 0; b < st.large.size(); ++b) xl = st.large[b].forward(xl, ctx, sc.large[b]);
      auto out = st.cross.forward(xl, xs, sc.cross);
      xl = std::move(out.z_large);
      xs = std::move(out.z_small);
      c.attn_small = std::move(out.attn_large_query);
      c.attn_large = std::move(out.attn_small_query);
    }
    c.cls_small = norm_small.forward(xs.topRows(1), &c.norm_small);
    c.cls_large = norm_large.forward(xl.topRows(1), &c.norm_large);
    c.logits_small = head_small.forward(c.cls_small);
    c.logits_large = head_large.forward(c.cls_large);
    return T(0.5) * (c.logits_small + c.logits_large);
  }

  void backward(const Cache& c, const Matrix<T>& dlogits) {
    const Matrix<T> dhead = T(0.5) * dlogits;
    const Index k = c.in_small.rows();
    Matrix<T> dxs = Matrix<T>::Zero(1 + k, cfg_.dim_small);
    Matrix<T> dxl = Matrix<T>::Zero(1 + k, cfg_.dim_large);
    dxs.topRows(1) = norm_small.backward(c.norm_small, head_small.backward(c.cls_small, dhead));
    dxl.topRows(1) = norm_large.backward(c.norm_large, head_large.backward(c.cls_large, dhead));
    for (std::size_t s = stages.size(); s-- > 0;) {
      Stage& st = stages[s];
      const StageCache& sc = c.stages[s];
      auto [gl, gs] = st.cross.backward(sc.cross, dxl, dxs);
      dxl = std::move(gl);
      dxs = std::move(gs);
      for (std::size_t b = st.small.size(); b-- > 0;) dxs = st.small[b].backward(sc.small[b], dxs);
      for (std::size_t b = st.large.size(); b-- > 0;) dxl = st.large[b].backward(sc.large[b], dxl);
    }
    token_backward(dxs, c.in_small, proj_small, cls_small);
    token_backward(dxl, c.in_large, proj_large, cls_large);
  }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out;
    if (proj_small) proj_small->collect(out);
    if (proj_large) proj_large->collect(out);
    out.push_back(&cls_small);
    out.push_back(&cls_large);
    for (auto& st : stages) {
      for (auto& b : st.small) b.collect(out);
      for (auto& b : st.large) b.collect(out);
      st.cross.collect(out);
    }
    norm_small.collect(out);
    norm_large.collect(out);
    head_small.collect(out);
    head_large.collect(out);
    return out;
  }

  struct Stage {
    std::vector<nn::TransformerBlock<T>> small, large;
    nn::CrossAttentionModule<T> cross;
  };

  std::optional<nn::Linear<T>> proj_small, proj_large;
  nn::Parameter<T> cls_small, cls_large;
  std::vector<Stage> stages;
  nn::LayerNorm<T> norm_small, norm_large;
  nn::Linear<T> head_small, head_large;

 private:
  static Matrix<T> tokens(const Matrix<T>& x, const std::optional<nn::Linear<T>>& proj,
                          const nn::Parameter<T>& cls) {
    Matrix<T> t(1 + x.rows(), cls.value.cols());
    t.topRows(1) = cls.value;
    t.bottomRows(x.rows()) = proj ? proj->forward(x) : x;
    return t;
  }

  static void token_backward(const Matrix<T>& dt, const Matrix<T>& x, std::optional<nn::Linear<T>>& proj,
                             nn::Parameter<T>& cls) {
    cls.grad += dt.topRows(1);
    if (proj) proj->backward(x, dt.bottomRows(x.rows()), false);
  }

  FusionConfig cfg_;
};

struct SlidePrediction {
  std::string slide_id;
  double p_high_risk = 0;
  std::array<double, 2> logits_small{};  // per-branch head logits
  std::array<double, 2> logits_large{};
  double attn_small_cls = 0;  // weight on the CLS key
  double attn_large_cls = 0;
  std::vector<double> attn_small;  // per small patch, length k
  std::vector<double> attn_large;  // per large patch, length k
};

/// Eval-mode prediction. `attn_small` scores small patches (the large-branch
/// CLS query over [cls ; small patches]) and `attn_large` scores large
/// patches, both from the last exchange, head-averaged.
SlidePrediction predict_slide(const FusionModel<float>& model, const vpu::SlideEmbedding& e);

struct RankedPatch {
  char scale = 's';
  int rank = 0;  // 1-based
  int index = 0;
  double score = 0;
  Point center;
  std::filesystem::path file;
};

/// Indices of the k_top largest scores; ties go to the lower index.
std::vector<int> top_k_indices(const std::vector<double>& scores, int k_top);

/// Writes the top-k small and large patches as PNGs into `out_dir` plus a
/// `ranking.tsv` record (scale, rank, index, score, center_x, center_y, file).
std::vector<RankedPatch> explain_topk(const SlidePrediction& prediction, const PatchArchive& archive,
                                      const std::filesystem::path& out_dir, int k_top = 3);

void save_fusion(const std::filesystem::path& path, const FusionModel<float>& model,
                 const std::string& extra_config = {});
FusionModel<float> load_fusion(const std::filesystem::path& path);

}  // namespace less::fusion
