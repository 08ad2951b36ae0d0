// Acceptance harness: one PASS/FAIL line per criterion.
//
//   less_acceptance [--only 1,2,...] [--workdir DIR] [--keep]
//
// Criteria 1-5 are property suites on micro inputs. 6-8 share one synthetic
// corpus and one set of stage-1 runs (see build_e2e).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgproc.hpp>

#include "gradcheck.hpp"
#include "less/baselines.hpp"
#include "less/config.hpp"
#include "less/evalkit.hpp"
#include "less/fusion.hpp"
#include "less/ingest.hpp"
#include "less/log.hpp"
#include "less/nn/cross_attention.hpp"
#include "less/nn/encoder.hpp"
#include "less/nn/transformer.hpp"
#include "less/patch_archive.hpp"
#include "less/random.hpp"
#include "less/slide_trainer.hpp"
#include "less/strategies.hpp"
#include "less/synthgen.hpp"
#include "less/vpu.hpp"

namespace fs = std::filesystem;
using namespace less;
using less::testing::check_params;
using less::testing::check_tensor;
using less::testing::dot;
using less::testing::GradReport;
using less::testing::Mat;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Mat randn(nn::Index r, nn::Index c, Rng& rng, double s = 1.0) { return nn::normal_matrix<double>(r, c, s, rng); }

// ---- 1. loss laws ------------------------------------------------------------

Outcome criterion1() {
  Rng rng(101);
  double worst_scale = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto nu = 1 + uniform_index(rng, 64), np = 1 + uniform_index(rng, 64);
    const double c = uniform(rng, 0.01, 1.0);
    std::vector<double> u(nu), p(np), cu(nu), cp(np);
    for (std::size_t i = 0; i < nu; ++i) u[i] = uniform(rng, 0.01, 1.0), cu[i] = c * u[i];
    for (std::size_t i = 0; i < np; ++i) p[i] = uniform(rng, 0.01, 1.0), cp[i] = c * p[i];
    worst_scale = std::max(worst_scale, std::abs(vpu::variational_loss(cu, cp) - vpu::variational_loss(u, p)));
  }

  // Φ = sigmoid(w·x + b) over random 6-d inputs.
  const Mat w = randn(6, 1, rng);
  const vpu::PhiFn phi = [&](const Mat& x) {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (nn::Index i = 0; i < x.rows(); ++i) out[i] = 1.0 / (1.0 + std::exp(-(x.row(i) * w)(0, 0) - 0.3));
    return out;
  };
  double worst_g0 = 0, worst_g1 = 0;
  for (int t = 0; t < 100; ++t) {
    const auto n = 1 + static_cast<nn::Index>(uniform_index(rng, 32));
    const Mat xp = randn(n, 6, rng), xu = randn(n, 6, rng);
    worst_g0 = std::max(worst_g0, std::abs(vpu::mixup_regularizer_at(xp, xu, phi, 0.0).value));
    double expect = 0;
    for (double v : phi(xp)) expect += std::log(v) * std::log(v);
    expect /= static_cast<double>(n);
    worst_g1 = std::max(worst_g1, std::abs(vpu::mixup_regularizer_at(xp, xu, phi, 1.0).value - expect) /
                                      std::max(1.0, std::abs(expect)));
  }

  bool lambda0_exact = true;
  for (int t = 0; t < 1000; ++t) {
    const double lv = uniform(rng, -5, 5), lr = uniform(rng, 0, 50);
    lambda0_exact &= vpu::vpu_objective(lv, lr, 0.0) == lv;
  }
  lambda0_exact &= vpu::vpu_objective(-0.7, std::numeric_limits<double>::infinity(), 0.0) == -0.7;

  const bool ok = worst_scale <= 1e-9 && worst_g0 <= 1e-12 && worst_g1 <= 1e-12 && lambda0_exact;
  return {ok, "scale-invariance max|Δ|=" + fmt(worst_scale) + " over 1000 cases; reg(γ=0) max=" + fmt(worst_g0) +
                  "; reg(γ=1) vs mean(log Φ(x_P))² max rel=" + fmt(worst_g1) +
                  "; λ=0 objective == L_var: " + (lambda0_exact ? "exact" : "NOT exact")};
}

// ---- 2. gradients --------------------------------------------------------------

GradReport grad_encoder(Rng& rng) {
  nn::EncoderSpec spec;
  spec.input_px = 16;
  spec.channels = {2, 3, 3, 4};
  spec.kernels = {4, 3, 3, 3};
  spec.strides = {2, 2, 1, 1};
  spec.pads = {0, 1, 1, 1};
  spec.hidden = 6;
  spec.embed_dim = 5;
  nn::EncoderNet<double> net(spec, rng);
  const Mat x = randn(2, spec.input_numel(), rng);
  const Mat wl = randn(2, 2, rng), we = randn(2, spec.embed_dim, rng);
  auto loss = [&] {
    const auto o = net.forward(x);
    return dot(wl, o.log_prob) + dot(we, o.embedding);
  };
  auto params = net.parameters();
  nn::zero_grads(params);
  nn::EncoderNet<double>::Cache c;
  net.forward(x, &c);
  net.backward(c, wl, &we);
  return check_params(params, loss);
}

GradReport grad_block(Rng& rng) {
  nn::TransformerBlock<double> blk("blk", 8, 2, 2.0, 0.0, 0.0, rng);
  {
    nn::ParamRefs<double> ps;
    blk.collect(ps);
    less::testing::jitter(ps, rng);
  }
  Mat x = randn(5, 8, rng);
  const Mat w = randn(5, 8, rng);
  const nn::Context ctx;
  auto loss = [&] {
    nn::TransformerBlock<double>::Cache c;
    return dot(w, blk.forward(x, ctx, c));
  };
  nn::ParamRefs<double> params;
  blk.collect(params);
  nn::zero_grads(params);
  nn::TransformerBlock<double>::Cache c;
  blk.forward(x, ctx, c);
  const Mat dx = blk.backward(c, w);
  auto rep = check_params(params, loss);
  check_tensor(x, dx, "x", loss, rep);
  return rep;
}

GradReport grad_cross(Rng& rng) {
  nn::CrossAttentionModule<double> mod("cross", 6, 8, 2, 2, rng);
  {
    nn::ParamRefs<double> ps;
    mod.collect(ps);
    less::testing::jitter(ps, rng);
  }
  Mat xl = randn(4, 8, rng), xs = randn(5, 6, rng);
  const Mat wl = randn(4, 8, rng), ws = randn(5, 6, rng);
  auto loss = [&] {
    nn::CrossAttentionModule<double>::Cache c;
    const auto o = mod.forward(xl, xs, c);
    return dot(wl, o.z_large) + dot(ws, o.z_small);
  };
  nn::ParamRefs<double> params;
  mod.collect(params);
  nn::zero_grads(params);
  nn::CrossAttentionModule<double>::Cache c;
  mod.forward(xl, xs, c);
  const auto [dl, ds] = mod.backward(c, wl, ws);
  auto rep = check_params(params, loss);
  check_tensor(xl, dl, "x_large", loss, rep);
  check_tensor(xs, ds, "x_small", loss, rep);
  return rep;
}

template <class Model>
GradReport grad_slide_model(Model& model, const std::vector<std::pair<Mat, Mat>>& slides, const std::vector<int>& labels,
                            Rng& rng) {
  less::testing::jitter(model.parameters(), rng);
  const nn::Context ctx;
  auto loss = [&] {
    double l = 0;
    for (std::size_t i = 0; i < slides.size(); ++i) {
      typename Model::Cache c;
      l += cross_entropy(model.logits(slides[i].first, slides[i].second, ctx, c), labels[i]);
    }
    return l;
  };
  auto params = model.parameters();
  nn::zero_grads(params);
  for (std::size_t i = 0; i < slides.size(); ++i) {
    typename Model::Cache c;
    Mat dlogits;
    cross_entropy(model.logits(slides[i].first, slides[i].second, ctx, c), labels[i], &dlogits);
    model.backward(c, dlogits);
  }
  return check_params(params, loss);
}

Outcome criterion2() {
  Rng rng(202);
  const std::vector<std::pair<Mat, Mat>> micro = {{randn(4, 5, rng), randn(4, 7, rng)},
                                                  {randn(3, 5, rng), randn(3, 7, rng)}};
  const std::vector<int> labels = {0, 1};

  std::vector<std::pair<std::string, GradReport>> reps;
  reps.emplace_back("EncoderNet", grad_encoder(rng));
  reps.emplace_back("vit_block", grad_block(rng));
  reps.emplace_back("cross_attention_module", grad_cross(rng));
  for (auto pool : {baselines::Pooling::kMean, baselines::Pooling::kMax}) {
    baselines::MlpAggregator<double> mlp(7, baselines::Scale::kLarge, pool, rng);
    reps.emplace_back(pool == baselines::Pooling::kMean ? "mlp(mean)" : "mlp(max)",
                      grad_slide_model(mlp, micro, labels, rng));
  }
  {
    baselines::MlpAggregator<double> mlp(12, baselines::Scale::kConcat, baselines::Pooling::kMean, rng);
    reps.emplace_back("mlp(concat)", grad_slide_model(mlp, micro, labels, rng));
  }
  {
    // tau low enough that the micro graphs have edges.
    baselines::GcnAggregator<double> gnn(5, 6, baselines::Scale::kSmall, -0.2, rng);
    reps.emplace_back("gnn", grad_slide_model(gnn, micro, labels, rng));
  }
  {
    fusion::FusionConfig fc;
    fc.preset = "micro";
    fc.dim_small = 6;
    fc.dim_large = 8;
    fc.in_small = 5;
    fc.in_large = 7;
    fc.heads_small = 2;
    fc.heads_large = 2;
    fc.mlp_ratio = 2;
    fc.dropout = 0;
    fc.drop_path = 0;
    fc.n_cross = 2;
    fusion::FusionModel<double> model(fc, rng);
    reps.emplace_back("fusion stack (2 slides)", grad_slide_model(model, micro, labels, rng));
  }

  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : reps) {
    ok &= r.max_rel <= 1e-4 && r.checked > 0;
    detail += (detail.empty() ? "" : "; ") + name + " " + fmt(r.max_rel, 2);

  }
  return {ok, "max per-tensor rel err (central differences, h=1e-6): " + detail};
}

// ---- 3. attention structure ------------------------------------------------------

Outcome criterion3() {
  Rng rng(303);
  double worst_row = 0;
  auto check_rows = [&](const Mat& p) {
    for (nn::Index i = 0; i < p.rows(); ++i) worst_row = std::max(worst_row, std::abs(p.row(i).sum() - 1.0));
  };
  for (int t = 0; t < 50; ++t) check_rows(nn::softmax_rows<double>(randn(7, 13, rng, 30.0)));

  nn::TransformerBlock<double> blk("blk", 8, 2, 2.0, 0.0, 0.0, rng);
  nn::TransformerBlock<double>::Cache bc;
  const Mat x = randn(6, 8, rng);
  blk.forward(x, nn::Context{}, bc);
  for (const auto& m : bc.attn.attn.maps) check_rows(m);

  nn::CrossAttentionModule<double> mod("cross", 6, 8, 2, 2, rng);
  nn::CrossAttentionModule<double>::Cache cc;
  const Mat xl = randn(5, 8, rng), xs = randn(9, 6, rng);
  const auto out = mod.forward(xl, xs, cc);
  bool one_query = out.attn_large_query.rows() == 1 && out.attn_small_query.rows() == 1;
  for (const auto* c : {&cc.large.mca.attn, &cc.small.mca.attn}) {
    for (const auto& m : c->maps) {
      one_query &= m.rows() == 1;
      check_rows(m);
    }
  }
  check_rows(out.attn_large_query);
  check_rows(out.attn_small_query);

  // Zeroed sublayers reduce to the residual path.
  for (auto* p : {&blk.attn.proj.weight, &blk.attn.proj.bias, &blk.mlp.fc2.weight, &blk.mlp.fc2.bias}) {
    p->value.setZero();
  }
  nn::TransformerBlock<double>::Cache bc2;
  const double block_id = (blk.forward(x, nn::Context{}, bc2) - x).cwiseAbs().maxCoeff();
  for (auto* p : {&mod.large.mca.proj.weight, &mod.large.mca.proj.bias}) p->value.setZero();
  nn::CrossAttentionModule<double>::Cache cc2;
  const auto out2 = mod.forward(xl, xs, cc2);
  const double merged_id = (cc2.large.merged - cc2.large.cls_proj).cwiseAbs().maxCoeff();
  const double tokens_id = std::max((out2.z_large.bottomRows(4) - xl.bottomRows(4)).cwiseAbs().maxCoeff(),
                                    (out2.z_small.bottomRows(8) - xs.bottomRows(8)).cwiseAbs().maxCoeff());

  // Fusion output under patch-order permutations (pairs and independent).
  auto fc = fusion::FusionConfig::from_preset("tiny");
  fc.dropout = fc.drop_path = 0.1;  // inactive at inference; must not matter
  fusion::FusionModel<double> fm(fc, rng);
  const Mat s = randn(100, fc.in_small, rng), l = randn(100, fc.in_large, rng);
  auto prob = [&](const Mat& a, const Mat& b) {
    decltype(fm)::Cache c;
    const Mat lg = fm.logits(a, b, nn::Context{}, c);
    return 1.0 / (1.0 + std::exp(lg(0, 0) - lg(0, 1)));
  };
  const double p0 = prob(s, l);
  double worst_perm = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<int> ps(100), pl(100);
    std::iota(ps.begin(), ps.end(), 0);
    shuffle(ps, rng);
    if (t % 2 == 0) pl = ps;
    else std::iota(pl.begin(), pl.end(), 0), shuffle(pl, rng);
    Mat s2(100, s.cols()), l2(100, l.cols());
    for (int i = 0; i < 100; ++i) s2.row(i) = s.row(ps[i]), l2.row(i) = l.row(pl[i]);
    worst_perm = std::max(worst_perm, std::abs(prob(s2, l2) - p0));
  }

  const bool ok = worst_row <= 1e-6 && one_query && block_id == 0.0 && merged_id == 0.0 && tokens_id == 0.0 &&
                  worst_perm <= 1e-6;
  return {ok, "softmax row-sum max|Δ|=" + fmt(worst_row) + "; cross-attn query rows=1: " + (one_query ? "yes" : "NO") +
                  "; residual identity |Δ| block=" + fmt(block_id) + " mca=" + fmt(merged_id) +
                  " tokens=" + fmt(tokens_id) + "; permutation max|Δp|=" + fmt(worst_perm) + " over 50"};
}

// ---- 4. metrics -------------------------------------------------------------------

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return num / pairs;
}

Outcome criterion4() {
  Rng rng(404);
  double worst = 0;
  bool swap_ok = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 99);
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = t % 3 == 0;  // many ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? std::round(uniform01(rng) * 10) / 10 : uniform01(rng);
      y[i] = uniform01(rng) < 0.4 ? 1 : 0;
    }
    y[0] = 1, y[1] = 0;
    worst = std::max(worst, std::abs(eval::auc(s, y) - brute_auc(s, y)));

    std::vector<double> s_inv(n);
    std::vector<int> y_inv(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (s[i] == 0.5) s[i] = 0.55;  // keep the threshold decision symmetric
      s_inv[i] = 1.0 - s[i];
      y_inv[i] = 1 - y[i];
    }
    const auto a = eval::compute_metrics(s, y), b = eval::compute_metrics(s_inv, y_inv);
    swap_ok &= a.sensitivity == b.specificity && a.specificity == b.sensitivity;
  }
  return {worst <= 1e-12 && swap_ok, "AUC vs brute force max|Δ|=" + fmt(worst) + " over 200 sets; sens/spec swap: " +
                                         (swap_ok ? "exact" : "MISMATCH")};
}

// ---- 5. preprocessing ---------------------------------------------------------------

Outcome criterion5() {
  Rng rng(505);
  const ingest::FilterThresholds th;
  const cv::Mat white(128, 128, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Mat gray(128, 128, CV_8UC3, cv::Scalar(128, 128, 128));
  cv::Mat textured(128, 128, CV_8UC3, cv::Scalar(225, 215, 225));
  for (int i = 0; i < 25; ++i) {
    cv::circle(textured, {static_cast<int>(uniform_index(rng, 128)), static_cast<int>(uniform_index(rng, 128))},
               6 + static_cast<int>(uniform_index(rng, 6)), cv::Scalar(110, 60, 150), cv::FILLED);
  }
  const auto v1 = ingest::filter_patch(white, th).verdict, v2 = ingest::filter_patch(gray, th).verdict,
             v3 = ingest::filter_patch(textured, th).verdict;
  const bool verdicts = v1 == ingest::FilterVerdict::kBackground && v2 == ingest::FilterVerdict::kBlank &&
                        v3 == ingest::FilterVerdict::kKeep;

  bool tiling = true;
  for (int t = 0; t < 20; ++t) {
    const int w = 100 + static_cast<int>(uniform_index(rng, 1500)), h = 100 + static_cast<int>(uniform_index(rng, 1500));
    std::vector<Point> brute;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x % 64 == 0 && y % 64 == 0 && x + 128 <= w && y + 128 <= h) brute.push_back({x, y});
      }
    }
    tiling &= ingest::tile_positions(w, h) == brute;
  }

  cv::Mat slide(1024, 1024, CV_8UC3);
  cv::randu(slide, cv::Scalar::all(0), cv::Scalar::all(255));
  const auto all = ingest::tile_positions(1024, 1024);
  bool exact = true, deterministic = true;
  std::string counts;
  for (std::size_t n_kept : {1, 3, 37, 99, 100, 101, 225}) {
    const std::vector<Point> kept(all.begin(), all.begin() + static_cast<long>(n_kept));
    const auto a = ingest::sample_patches(slide, "s", kept, 100, 7);
    const auto b = ingest::sample_patches(slide, "s", kept, 100, 7);
    exact &= a.size() == 100;
    int n_aug = 0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
      n_aug += a[i].augmented;
      deterministic &= a[i].center == b[i].center && a[i].augmentation == b[i].augmentation &&
                       a[i].source == b[i].source && cv::norm(a[i].small, b[i].small, cv::NORM_INF) == 0 &&
                       cv::norm(a[i].large, b[i].large, cv::NORM_INF) == 0;
    }
    exact &= n_aug == static_cast<int>(n_kept >= 100 ? 0 : 100 - n_kept);
    counts += (counts.empty() ? "" : ",") + std::to_string(n_kept) + "→" + std::to_string(a.size());
  }
  return {verdicts && tiling && exact && deterministic,
          std::string("verdicts white/gray/textured = ") + std::string(ingest::verdict_name(v1)) + "/" +
              std::string(ingest::verdict_name(v2)) + "/" + std::string(ingest::verdict_name(v3)) +
              "; tiling == brute force on 20 sizes: " + (tiling ? "yes" : "NO") + "; sample_patches kept→returned " +
              counts + "; deterministic: " + (deterministic ? "yes" : "NO")};
}

// ---- shared end-to-end state (6-8) ----------------------------------------------------

constexpr int kSeeds = 5;
const std::vector<int> kSweepEpochs = {4, 8, 10, 16};

struct SlideInfo {
  SlideRecord record;
  fs::path archive;
  std::vector<int> small_labels;  // oracle label per pair; -1 for augmented copies
};

struct EncoderPair {
  nn::EncoderNet<float> small, large;
};

struct E2E {
  fs::path dir;
  std::map<std::string, SlideInfo> slides;
  eval::SplitPlan split;
  RunConfig cfg;
  double corpus_seconds = 0;
};

struct SlideScores {
  std::vector<double> less_acc, vit_acc;
  std::vector<eval::Metrics> less_metrics;
};

class EndToEnd {
 public:
  EndToEnd(fs::path dir, RunConfig cfg) { e_.dir = std::move(dir), e_.cfg = std::move(cfg); }

  const E2E& state() const { return e_; }

  void build_corpus() {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(e_.dir / "archives");
    const auto sc = e_.cfg.synth();
    const auto ic = e_.cfg.ingest();
    std::vector<SlideRecord> records;
    for (const auto& plan : synth::plan_corpus(sc)) {
      auto slide = synth::generate_slide(sc, plan);
      auto res = ingest::ingest_image(slide.image, plan.id, ic);
      SlideInfo info;
      info.record = {plan.id, {}, coarse_label_of(plan.subtype), plan.subtype, plan.seed};
      info.archive = e_.dir / "archives" / (plan.id + ".lpa");
      for (const auto& p : res.pairs) {
        const Point tl{p.center.x - ic.small_px / 2, p.center.y - ic.small_px / 2};
        info.small_labels.push_back(p.augmented ? -1 : label_of(slide.oracle.window_label(tl, ic.small_px)));
      }
      write_archive(info.archive, {plan.id, ic.small_px, ic.large_px, std::move(res.pairs)});
      records.push_back(info.record);
      e_.slides.emplace(plan.id, std::move(info));
    }
    e_.split = eval::make_splits(records, 1, e_.cfg.eval().split_seed).front();
    e_.corpus_seconds = seconds_since(t0);
    log::info("corpus: ", records.size(), " slides, train ", e_.split.train.size(), " / test ", e_.split.test.size(),
              " in ", e_.corpus_seconds, " s");
  }

  // P = benign training slides, U = malignant training slides.
  vpu::PuSets pu_sets(bool large) const {
    const int px = large ? ingest::kLargePatchPx : ingest::kSmallPatchPx;
    vpu::PuSets sets{vpu::PatchBank(px), vpu::PatchBank(px)};
    for (const auto& id : e_.split.train) {
      const auto& info = e_.slides.at(id);
      auto& bank = info.record.subtype == Subtype::kBenign ? sets.positive : sets.unlabeled;
      for (const auto& p : read_archive(info.archive).pairs) bank.add(large ? p.large : p.small);
    }
    return sets;
  }

  // Non-augmented small patches of every test slide with oracle labels.
  void load_test_patches() {
    for (const auto& id : e_.split.test) {
      const auto& info = e_.slides.at(id);
      const auto archive = read_archive(info.archive);
      for (std::size_t i = 0; i < archive.pairs.size(); ++i) {
        if (info.small_labels[i] < 0) continue;
        test_bank_.add(archive.pairs[i].small);
        test_labels_.push_back(info.small_labels[i]);
      }
    }
    log::info("test patches: ", test_labels_.size(), " (",
              std::count(test_labels_.begin(), test_labels_.end(), 1), " malignant)");
  }

  double patch_auc(const nn::EncoderNet<float>& model) const {
    return eval::auc(vpu::malignancy_scores(model, test_bank_), test_labels_);
  }

  /// Embeddings of all slides for several encoder pairs, reading each
  /// archive once.
  std::vector<std::map<std::string, vpu::SlideEmbedding>> embed(const std::vector<const EncoderPair*>& pairs) const {
    std::vector<std::map<std::string, vpu::SlideEmbedding>> out(pairs.size());
    for (const auto& [id, info] : e_.slides) {
      const auto archive = read_archive(info.archive);
      for (std::size_t j = 0; j < pairs.size(); ++j) {
        out[j].emplace(id, vpu::export_embeddings(pairs[j]->small, pairs[j]->large, archive));
      }
    }
    return out;
  }

  eval::Metrics slide_run(Strategy s, const std::map<std::string, vpu::SlideEmbedding>& emb, int seed) const {
    std::vector<LabeledSlide> train;
    for (const auto& id : e_.split.train) train.push_back({&emb.at(id), label_index(e_.slides.at(id).record.coarse_label)});
    std::vector<const vpu::SlideEmbedding*> test;
    std::vector<int> labels;
    for (const auto& id : e_.split.test) {
      test.push_back(&emb.at(id));
      labels.push_back(label_index(e_.slides.at(id).record.coarse_label));
    }
    const auto scores = train_and_score(s, e_.cfg.strategies(), train, test,
                                        derive_seed(e_.split.split_seed, static_cast<std::uint64_t>(seed)));
    return eval::compute_metrics(scores, labels, e_.cfg.eval().threshold);
  }

 private:
  static int label_of(PatchClass c) { return c == PatchClass::kMalignant ? 1 : 0; }

  E2E e_;
  vpu::PatchBank test_bank_{ingest::kSmallPatchPx};
  std::vector<int> test_labels_;
};

// Desk-scale settings; see README "Acceptance" for the reasoning.
RunConfig e2e_config() {
  RunConfig c;
  c.set("synth.n_per_subtype", "50");
  c.set("synth.slide_px", "2048");
  c.set("synth.malignant_fraction", "0.3");
  c.set("stage2.preset", "tiny");
  c.set("stage2.batch_size", "16");
  c.set("stage2.lr", "1e-4");
  c.set("stage2.lr_end", "1e-5");
  c.validate();
  return c;
}

struct E2EResults {
  double runtime6 = 0;
  std::vector<double> vpu_auc, pn_auc;
  std::map<std::string, SlideScores> by_variant;  // "lambda=0.03", "lambda=0", "epochs=4", ...
  double total_seconds = 0;
};

E2EResults run_e2e(const fs::path& workdir, const std::set<int>& wanted) {
  E2EResults r;
  const auto t0 = std::chrono::steady_clock::now();
  EndToEnd e2e(workdir, e2e_config());
  const auto& cfg = e2e.state().cfg;
  e2e.build_corpus();
  e2e.load_test_patches();

  auto vcfg = cfg.stage1();
  // Seed-0 encoders run 16 epochs with snapshots; the 10-epoch snapshot is
  // identical to a 10-epoch run (step schedule, same batch stream).
  std::map<int, EncoderPair> by_epoch;
  double sweep_extra = 0;  // time only criterion 8 needs
  {
    auto c = vcfg;
    const bool sweep = wanted.contains(8);
    if (sweep) c.epochs = 16, c.snapshot_epochs = kSweepEpochs;
    for (const bool large : {false, true}) {
      const auto ts = std::chrono::steady_clock::now();
      auto sets = e2e.pu_sets(large);
      auto trained = vpu::train_encoder(sets, cfg.encoder_spec(large), c);
      if (!sweep) trained.snapshots.emplace_back(10, std::move(trained.model));
      for (auto& [ep, net] : trained.snapshots) (large ? by_epoch[ep].large : by_epoch[ep].small) = std::move(net);
      if (sweep) sweep_extra += seconds_since(ts) * 6.0 / 16.0;
      log::info("stage1 seed 0 ", large ? "large" : "small", " done");
    }
  }
  r.vpu_auc.push_back(e2e.patch_auc(by_epoch.at(10).small));

  if (wanted.contains(6)) {
    auto sets = e2e.pu_sets(false);
    for (int s = 0; s < kSeeds; ++s) {
      auto c = vcfg;
      c.seed = static_cast<std::uint64_t>(s);
      if (s > 0) r.vpu_auc.push_back(e2e.patch_auc(vpu::train_encoder(sets, cfg.encoder_spec(false), c).model));
      c.objective = vpu::Objective::kSupervisedPN;
      r.pn_auc.push_back(e2e.patch_auc(vpu::train_encoder(sets, cfg.encoder_spec(false), c).model));
      log::info("seed ", s, ": VPU patch AUC ", r.vpu_auc[s], ", PN ", r.pn_auc[s]);
    }
  }

  std::optional<EncoderPair> no_reg;
  double ablation_extra = 0;
  if (wanted.contains(7)) {
    const auto ts = std::chrono::steady_clock::now();
    auto c = vcfg;
    c.lambda = 0.0;
    no_reg.emplace();
    for (const bool large : {false, true}) {
      auto sets = e2e.pu_sets(large);
      (large ? no_reg->large : no_reg->small) = vpu::train_encoder(sets, cfg.encoder_spec(large), c).model;
    }
    ablation_extra += seconds_since(ts);
  }

  std::vector<std::string> names;
  std::vector<const EncoderPair*> pairs;
  for (const auto& [ep, pair] : by_epoch) {
    names.push_back(ep == 10 ? "lambda=" + cfg.get("stage1.lambda") : "epochs=" + std::to_string(ep));
    pairs.push_back(&pair);
  }
  if (no_reg) names.push_back("lambda=0"), pairs.push_back(&*no_reg);
  const auto te = std::chrono::steady_clock::now();
  const auto embeddings = e2e.embed(pairs);
  const double embed_each = seconds_since(te) / static_cast<double>(pairs.size());
  sweep_extra += embed_each * static_cast<double>(by_epoch.size() - 1);
  ablation_extra += no_reg ? embed_each : 0.0;

  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto ts = std::chrono::steady_clock::now();
    auto& sc = r.by_variant[names[j]];
    const bool main_variant = names[j] == "lambda=" + cfg.get("stage1.lambda");
    for (int s = 0; s < kSeeds; ++s) {
      const auto m = e2e.slide_run(Strategy::kLess, embeddings[j], s);
      sc.less_acc.push_back(m.accuracy);
      sc.less_metrics.push_back(m);
      if (main_variant && wanted.contains(6)) sc.vit_acc.push_back(e2e.slide_run(Strategy::kVit, embeddings[j], s).accuracy);
    }
    const double dt = seconds_since(ts);
    if (!main_variant) (names[j] == "lambda=0" ? ablation_extra : sweep_extra) += dt;
    log::info(names[j], ": LESS acc mean ", eval::summarize_values(sc.less_acc).mean, " (", dt, " s)");
  }

  r.total_seconds = seconds_since(t0);
  r.runtime6 = r.total_seconds - sweep_extra - ablation_extra;
  return r;
}

Outcome criterion6(const E2EResults& r) {
  const double vpu_min = *std::min_element(r.vpu_auc.begin(), r.vpu_auc.end());
  int wins = 0;
  std::string per_seed;
  for (int s = 0; s < kSeeds; ++s) {
    wins += r.pn_auc[s] < r.vpu_auc[s];
    per_seed += (s ? " " : "") + fmt(r.vpu_auc[s], 4) + "/" + fmt(r.pn_auc[s], 4);
  }
  const SlideScores* sc = nullptr;
  for (const auto& [k, v] : r.by_variant) {
    if (!v.vit_acc.empty()) sc = &v;
  }
  const double less_mean = eval::summarize_values(sc->less_acc).mean;
  const double vit_mean = eval::summarize_values(sc->vit_acc).mean;
  const bool ok = vpu_min >= 0.95 && wins >= 4 && less_mean >= 90.0 && less_mean >= vit_mean && r.runtime6 <= 1800;
  return {ok, "patch AUC VPU/PN per seed: " + per_seed + " (VPU min " + fmt(vpu_min, 4) + ", PN < VPU on " +
                  std::to_string(wins) + "/5); slide acc LESS " + fmt(less_mean, 4) + "% vs single-scale ViT " +
                  fmt(vit_mean, 4) + "% (5 seeds); runtime " + fmt(r.runtime6 / 60.0, 3) + " min"};
}

Outcome criterion7(const E2EResults& r, const std::string& default_lambda) {
  const auto a = r.by_variant.find("lambda=" + default_lambda), b = r.by_variant.find("lambda=0");
  if (a == r.by_variant.end() || b == r.by_variant.end()) return {false, "ablation runs missing"};
  std::vector<eval::RunRecord> runs;
  for (const auto& [label, it] : {std::pair{"W/ regularization", a}, std::pair{"W/o regularization", b}}) {
    for (int s = 0; s < static_cast<int>(it->second.less_metrics.size()); ++s) {
      runs.push_back({label, 0, s, true, "", it->second.less_metrics[s]});
    }
  }
  const auto rows = eval::summarize(runs);
  bool complete = rows.size() == 2;
  for (const auto& row : rows) complete &= row.accuracy.n == kSeeds && std::isfinite(row.accuracy.mean);
  std::cout << eval::format_table(rows);
  return {complete, "λ=" + default_lambda + " acc " + fmt(rows[0].accuracy.mean, 4) + "(" + fmt(rows[0].accuracy.std, 3) +
                        ") AUC " + fmt(rows[0].auc.mean, 4) + " | λ=0 acc " + fmt(rows[1].accuracy.mean, 4) + "(" +
                        fmt(rows[1].accuracy.std, 3) + ") AUC " + fmt(rows[1].auc.mean, 4) + "; both complete, " +
                        std::to_string(kSeeds) + " seeds each"};
}

Outcome criterion8(const E2EResults& r, const std::string& default_lambda) {
  std::vector<double> means;
  std::string detail;
  for (int ep : kSweepEpochs) {
    const auto key = ep == 10 ? "lambda=" + default_lambda : "epochs=" + std::to_string(ep);
    const auto it = r.by_variant.find(key);
    if (it == r.by_variant.end()) return {false, "missing sweep point " + std::to_string(ep)};
    means.push_back(eval::summarize_values(it->second.less_acc).mean);
    detail += (detail.empty() ? "" : ", ") + std::to_string(ep) + "→" + fmt(means.back(), 4) + "%";
  }
  const double spread = *std::max_element(means.begin(), means.end()) - *std::min_element(means.begin(), means.end());
  return {spread <= 5.0, "LESS slide acc by VPU epochs: " + detail + "; spread " + fmt(spread, 3) +
                             " points (tolerance 5, synthetic-corpus proxy)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "less-acceptance").string();
  bool keep = false, verbose = false;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for the end-to-end corpus");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  app.add_flag("-v,--verbose", verbose, "Progress messages");
  CLI11_PARSE(app, argc, argv);
  log::set_quiet(!verbose);

  std::set<int> wanted(only.begin(), only.end());
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8};

  int failures = 0;
  auto report = [&](int n, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  };

  const std::map<int, Outcome (*)()> quick = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5}};
  for (const auto& [n, fn] : quick) {
    if (wanted.contains(n)) report(n, fn);
  }

  if (wanted.contains(6) || wanted.contains(7) || wanted.contains(8)) {
    const std::string lambda = e2e_config().get("stage1.lambda");
    std::optional<E2EResults> res;
    std::string error;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fs::remove_all(workdir);
      res = run_e2e(workdir, wanted);
    } catch (const std::exception& e) {
      error = e.what();
    }
    if (!keep) fs::remove_all(workdir);
    std::cout << "end-to-end stages took " << fmt(seconds_since(t0) / 60.0, 3) << " min" << std::endl;
    auto fail = [&] { return Outcome{false, "end-to-end run failed: " + error}; };
    if (wanted.contains(6)) report(6, [&] { return res ? criterion6(*res) : fail(); });
    if (wanted.contains(7)) report(7, [&] { return res ? criterion7(*res, lambda) : fail(); });
    if (wanted.contains(8)) report(8, [&] { return res ? criterion8(*res, lambda) : fail(); });
  }
  return failures == 0 ? 0 : 1;
}
