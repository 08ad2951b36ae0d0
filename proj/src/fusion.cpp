#include "less/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "less/image.hpp"
#include "less/kv.hpp"
#include "less/nn/checkpoint.hpp"

namespace less::fusion {

FusionConfig FusionConfig::from_preset(const std::string& name) {
  FusionConfig c;
  c.preset = name;
  if (name == "tiny") {
    c.dim_small = 96, c.dim_large = 192, c.heads_small = 3, c.heads_large = 3;
  } else if (name == "small") {
    c.dim_small = 192, c.dim_large = 384, c.heads_small = 3, c.heads_large = 6;
  } else if (name == "base") {
    c.dim_small = 384, c.dim_large = 768, c.heads_small = 6, c.heads_large = 12;
  } else {
    throw ConfigError("unknown fusion preset '" + name + "' (tiny, small, base)");
  }
  return c;
}

void FusionConfig::validate() const {
  if (dim_small < 1 || dim_large < 1 || in_small < 1 || in_large < 1) throw ConfigError("fusion dims must be >= 1");
  if (depth < 0) throw ConfigError("fusion.depth must be >= 0");
  if (n_cross < 1) throw ConfigError("fusion.n_cross must be >= 1");
  if (heads_small < 1 || dim_small % heads_small != 0) throw ConfigError("fusion: dim_small not divisible by heads");
  if (heads_large < 1 || dim_large % heads_large != 0) throw ConfigError("fusion: dim_large not divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("fusion.dropout must lie in [0, 1)");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ConfigError("fusion.drop_path must lie in [0, 1)");
  if (!(mlp_ratio > 0.0)) throw ConfigError("fusion.mlp_ratio must be positive");
}

std::string FusionConfig::to_string() const {
  KeyValues kv;
  kv["preset"] = preset;
  kv["dim_small"] = std::to_string(dim_small);
  kv["dim_large"] = std::to_string(dim_large);
  kv["in_small"] = std::to_string(in_small);
  kv["in_large"] = std::to_string(in_large);
  kv["depth"] = std::to_string(depth);
  kv["n_cross"] = std::to_string(n_cross);
  kv["heads_small"] = std::to_string(heads_small);
  kv["heads_large"] = std::to_string(heads_large);
  kv["mlp_ratio"] = boost::lexical_cast<std::string>(mlp_ratio);
  kv["dropout"] = boost::lexical_cast<std::string>(dropout);
  kv["drop_path"] = boost::lexical_cast<std::string>(drop_path);
  return format_kv(kv);
}

FusionConfig FusionConfig::from_string(const std::string& text) {
  const auto kv = parse_kv(text);
  FusionConfig c;
  c.preset = kv_get<std::string>(kv, "preset");
  c.dim_small = kv_get<Index>(kv, "dim_small");
  c.dim_large = kv_get<Index>(kv, "dim_large");
  c.in_small = kv_get<Index>(kv, "in_small");
  c.in_large = kv_get<Index>(kv, "in_large");
  c.depth = kv_get<int>(kv, "depth");
  c.n_cross = kv_get<int>(kv, "n_cross");
  c.heads_small = kv_get<int>(kv, "heads_small");
  c.heads_large = kv_get<int>(kv, "heads_large");
  c.mlp_ratio = kv_get<double>(kv, "mlp_ratio");
  c.dropout = kv_get<double>(kv, "dropout");
  c.drop_path = kv_get<double>(kv, "drop_path");
  return c;
}

SlidePrediction predict_slide(const FusionModel<float>& model, const vpu::SlideEmbedding& e) {
  FusionModel<float>::Cache c;
  const auto logits = model.logits(e.small, e.large, nn::Context{}, c);
  SlidePrediction p;
  p.slide_id = e.slide_id;
  p.p_high_risk = static_cast<double>(nn::softmax_rows(logits)(0, 1));
  for (int j = 0; j < 2; ++j) {
    p.logits_small[j] = c.logits_small(0, j);
    p.logits_large[j] = c.logits_large(0, j);
  }
  p.attn_small_cls = c.attn_small(0, 0);
  p.attn_large_cls = c.attn_large(0, 0);
  p.attn_small.assign(c.attn_small.data() + 1, c.attn_small.data() + c.attn_small.cols());
  p.attn_large.assign(c.attn_large.data() + 1, c.attn_large.data() + c.attn_large.cols());
  return p;
}

std::vector<int> top_k_indices(const std::vector<double>& scores, int k_top) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto n = std::min<std::size_t>(std::max(k_top, 0), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), [&](int a, int b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  idx.resize(n);
  return idx;
}

std::vector<RankedPatch> explain_topk(const SlidePrediction& prediction, const PatchArchive& archive,
                                      const std::filesystem::path& out_dir, int k_top) {
  if (archive.slide_id != prediction.slide_id) {
    throw std::invalid_argument("archive '" + archive.slide_id + "' does not belong to slide '" +
                                prediction.slide_id + "'");
  }
  if (prediction.attn_small.size() != archive.pairs.size() || prediction.attn_large.size() != archive.pairs.size()) {
    throw ShapeError("attention length does not match the archive's patch count");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<RankedPatch> out;
  for (const char scale : {'s', 'l'}) {
    const auto& scores = scale == 's' ? prediction.attn_small : prediction.attn_large;
    const auto top = top_k_indices(scores, k_top);
    for (std::size_t r = 0; r < top.size(); ++r) {
      const auto& pair = archive.pairs[top[r]];
      RankedPatch rp{scale, static_cast<int>(r + 1), top[r], scores[top[r]], pair.center, {}};
      rp.file = std::string(scale == 's' ? "small" : "large") + "_rank" + std::to_string(r + 1) + ".png";
      write_rgb(out_dir / rp.file, scale == 's' ? pair.small : pair.large);
      out.push_back(std::move(rp));
    }
  }
  std::ofstream os(out_dir / "ranking.tsv");
  if (!os) throw std::runtime_error("cannot write ranking in " + out_dir.string());
  os << "# slide " << prediction.slide_id << " p_high_risk " << prediction.p_high_risk << '\n';
  os << "# scale\trank\tindex\tscore\tcenter_x\tcenter_y\tfile\n";
  for (const auto& r : out) {
    os << r.scale << '\t' << r.rank << '\t' << r.index << '\t' << r.score << '\t' << r.center.x << '\t'
       << r.center.y << '\t' << r.file.generic_string() << '\n';
  }
  return out;
}

void save_fusion(const std::filesystem::path& path, const FusionModel<float>& model, const std::string& extra_config) {
  auto copy = model;
  nn::write_checkpoint(path, nn::make_checkpoint("fusion", model.config().to_string() + extra_config,
                                                 copy.parameters()));
}

FusionModel<float> load_fusion(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("fusion checkpoint " + path.string() + " not found", "train-stage2");
  }
  const auto ck = nn::read_checkpoint(path);
  if (ck.kind != "fusion") throw ShapeError(path.string() + " is not a fusion checkpoint");
  Rng rng(0);
  FusionModel<float> model(FusionConfig::from_string(ck.config), rng);
  nn::load_parameters(ck, model.parameters());
  return model;
}

}  // namespace less::fusion
