#include "less/vpu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "less/nn/checkpoint.hpp"
#include "less/nn/optim.hpp"

namespace less::vpu {

namespace {

using nn::EncoderNet;
using nn::Index;

double clamp_phi(double phi) { return std::clamp(phi, kPhiFloor, 1.0); }

// Pixel bytes -> roughly zero-centred floats, HWC -> CHW.
template <class T>
void fill_row(const std::uint8_t* hwc, int px, T* row) {
  const std::size_t plane = static_cast<std::size_t>(px) * px;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      row[ch * plane + i] = static_cast<T>((hwc[3 * i + ch] / 255.0 - 0.5) / 0.25);
    }
  }
}

Matrix<double> mix_rows(const Matrix<double>& xp, const Matrix<double>& xu, double gamma) {
  if (xp.rows() != xu.rows() || xp.cols() != xu.cols()) {
    throw ShapeError("mixup: positive and unlabeled batches differ in shape");
  }
  return gamma * xp + (1.0 - gamma) * xu;
}

// Cycles through a shuffled index range, reshuffling at each wrap.
class IndexStream {
 public:
  IndexStream(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle(order_, rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

struct StepLoss {
  double l_var = 0, l_reg = 0, total = 0;
};

StepLoss variational_step(EncoderNet<float>& net, const Matrix<float>& xp, const Matrix<float>& xu,
                          const VpuTrainConfig& cfg, Rng& rng) {
  const Index bp = xp.rows(), bu = xu.rows();
  EncoderNet<float>::Cache cp, cu;
  const auto op = net.forward(xp, &cp);
  const auto ou = net.forward(xu, &cu);

  std::vector<double> phi_p(bp), phi_u(bu);
  for (Index i = 0; i < bp; ++i) phi_p[i] = clamp_phi(std::exp(static_cast<double>(op.log_prob(i, 0))));
  for (Index i = 0; i < bu; ++i) phi_u[i] = clamp_phi(std::exp(static_cast<double>(ou.log_prob(i, 0))));

  StepLoss loss;
  loss.l_var = variational_loss(phi_u, phi_p);

  // d/dlogphi of log(mean phi_U) is phi_i / sum(phi_U); of -mean(log phi_P) is -1/M.
  // Clamped entries carry no gradient.
  const double sum_u = std::accumulate(phi_u.begin(), phi_u.end(), 0.0);
  Matrix<float> dp = Matrix<float>::Zero(bp, 2), du = Matrix<float>::Zero(bu, 2);
  for (Index i = 0; i < bp; ++i) {
    if (phi_p[i] > kPhiFloor) dp(i, 0) = static_cast<float>(-1.0 / bp);
  }
  for (Index i = 0; i < bu; ++i) {
    if (phi_u[i] > kPhiFloor) du(i, 0) = static_cast<float>(phi_u[i] / sum_u);
  }

  if (cfg.lambda > 0.0) {
    const Index b = std::min(bp, bu);
    const double gamma = sample_beta(rng, cfg.alpha, cfg.alpha);
    const Matrix<float> xm = static_cast<float>(gamma) * xp.topRows(b) +
                             static_cast<float>(1.0 - gamma) * xu.topRows(b);
    EncoderNet<float>::Cache cm;
    const auto om = net.forward(xm, &cm);
    std::vector<double> phi_m(b);
    for (Index i = 0; i < b; ++i) phi_m[i] = clamp_phi(std::exp(static_cast<double>(om.log_prob(i, 0))));
    loss.l_reg = mixup_consistency(std::span(phi_u).first(b), phi_m, gamma);

    // The mixed target is treated as a constant.
    Matrix<float> dm = Matrix<float>::Zero(b, 2);
    for (Index i = 0; i < b; ++i) {
      if (phi_m[i] <= kPhiFloor) continue;
      const double target = std::log(clamp_phi(gamma + (1.0 - gamma) * phi_u[i]));
      dm(i, 0) = static_cast<float>(-2.0 * cfg.lambda * (target - std::log(phi_m[i])) / b);
    }
    net.backward(cm, dm);
  }
  net.backward(cp, dp);
  net.backward(cu, du);
  loss.total = vpu_objective(loss.l_var, loss.l_reg, cfg.lambda);
  return loss;
}

// Slide label as patch label: positives -> benign (0), unlabeled -> malignant (1).
StepLoss supervised_step(EncoderNet<float>& net, const Matrix<float>& xp, const Matrix<float>& xu) {
  const Index bp = xp.rows(), bu = xu.rows();
  const double n = static_cast<double>(bp + bu);
  EncoderNet<float>::Cache cp, cu;
  const auto op = net.forward(xp, &cp);
  const auto ou = net.forward(xu, &cu);
  double ce = 0;
  Matrix<float> dp = Matrix<float>::Zero(bp, 2), du = Matrix<float>::Zero(bu, 2);
  for (Index i = 0; i < bp; ++i) {
    ce -= op.log_prob(i, EncoderNet<float>::kBenign);
    dp(i, EncoderNet<float>::kBenign) = static_cast<float>(-1.0 / n);
  }
  for (Index i = 0; i < bu; ++i) {
    ce -= ou.log_prob(i, EncoderNet<float>::kMalignant);
    du(i, EncoderNet<float>::kMalignant) = static_cast<float>(-1.0 / n);
  }
  net.backward(cp, dp);
  net.backward(cu, du);
  StepLoss loss;
  loss.l_var = ce / n;
  loss.total = loss.l_var;
  return loss;
}

}  // namespace

double variational_loss(std::span<const double> phi_unlabeled, std::span<const double> phi_positive) {
  if (phi_unlabeled.empty() || phi_positive.empty()) throw std::domain_error("variational loss: empty batch");
  double sum_u = 0, sum_log_p = 0;
  for (double v : phi_unlabeled) {
    if (!(v > 0.0 && v <= 1.0)) throw std::domain_error("variational loss: phi outside (0, 1]");
    sum_u += v;
  }
  for (double v : phi_positive) {
    if (!(v > 0.0 && v <= 1.0)) throw std::domain_error("variational loss: phi outside (0, 1]");
    sum_log_p += std::log(v);
  }
  return std::log(sum_u / static_cast<double>(phi_unlabeled.size())) -
         sum_log_p / static_cast<double>(phi_positive.size());
}

double mixup_consistency(std::span<const double> phi_unlabeled, std::span<const double> phi_mixed, double gamma) {
  if (phi_unlabeled.size() != phi_mixed.size() || phi_mixed.empty()) {
    throw ShapeError("mixup: batches must be nonempty and of equal size");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::domain_error("mixup: gamma outside [0, 1]");
  double acc = 0;
  for (std::size_t i = 0; i < phi_mixed.size(); ++i) {
    const double target = clamp_phi(gamma + (1.0 - gamma) * clamp_phi(phi_unlabeled[i]));
    const double d = std::log(target) - std::log(clamp_phi(phi_mixed[i]));
    acc += d * d;
  }
  return acc / static_cast<double>(phi_mixed.size());
}

MixupResult mixup_regularizer(const Matrix<double>& x_positive, const Matrix<double>& x_unlabeled,
                              const PhiFn& phi, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::domain_error("mixup: alpha must be positive");
  return mixup_regularizer_at(x_positive, x_unlabeled, phi, sample_beta(rng, alpha, alpha));
}

MixupResult mixup_regularizer_at(const Matrix<double>& x_positive, const Matrix<double>& x_unlabeled,
                                 const PhiFn& phi, double gamma) {
  const Matrix<double> mixed = mix_rows(x_positive, x_unlabeled, gamma);
  const auto phi_u = phi(x_unlabeled);
  const auto phi_m = phi(mixed);
  return {mixup_consistency(phi_u, phi_m, gamma), gamma};
}

double vpu_objective(double l_var, double l_reg, double lambda) {
  if (lambda == 0.0) return l_var;
  return l_var + lambda * l_reg;
}

void VpuTrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("vpu.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("vpu.epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("vpu.lr must be positive");
  if (!(lr_end > 0.0 && lr_end <= lr)) throw ConfigError("vpu.lr_end must lie in (0, lr]");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("vpu.lr_gamma must lie in (0, 1]");
  if (lr_step_epochs < 1) throw ConfigError("vpu.lr_step_epochs must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("vpu.alpha must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("vpu.lambda must lie in [0, 1]");
  for (int e : snapshot_epochs) {
    if (e < 1 || e > epochs) throw ConfigError("vpu snapshot epoch out of range");
  }
}

void PatchBank::add(const cv::Mat& rgb) {
  if (rgb.rows != px_ || rgb.cols != px_ || rgb.type() != CV_8UC3) {
    throw ShapeError("patch bank expects " + std::to_string(px_) + "x" + std::to_string(px_) + " RGB patches");
  }
  const cv::Mat c = rgb.isContinuous() ? rgb : rgb.clone();
  data_.insert(data_.end(), c.data, c.data + static_cast<std::size_t>(px_) * px_ * 3);
  ++count_;
}

template <class T>
Matrix<T> PatchBank::batch(std::span<const std::size_t> indices) const {
  const std::size_t stride = static_cast<std::size_t>(px_) * px_ * 3;
  Matrix<T> out(static_cast<Index>(indices.size()), static_cast<Index>(stride));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= count_) throw std::out_of_range("patch bank index");
    fill_row(data_.data() + indices[r] * stride, px_, out.row(static_cast<Index>(r)).data());
  }
  return out;
}

cv::Mat PatchBank::image(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("patch bank index");
  const std::size_t stride = static_cast<std::size_t>(px_) * px_ * 3;
  cv::Mat m(px_, px_, CV_8UC3);
  std::copy_n(data_.data() + i * stride, stride, m.data);
  return m;
}

template Matrix<float> PatchBank::batch<float>(std::span<const std::size_t>) const;
template Matrix<double> PatchBank::batch<double>(std::span<const std::size_t>) const;

template <class T>
Matrix<T> images_to_batch(std::span<const cv::Mat> images) {
  if (images.empty()) return {};
  const int px = images.front().cols;
  Matrix<T> out(static_cast<Index>(images.size()), static_cast<Index>(3) * px * px);
  for (std::size_t r = 0; r < images.size(); ++r) {
    const cv::Mat& m = images[r];
    if (m.rows != px || m.cols != px || m.type() != CV_8UC3) throw ShapeError("inconsistent patch shapes in batch");
    const cv::Mat c = m.isContinuous() ? m : m.clone();
    fill_row(c.data, px, out.row(static_cast<Index>(r)).data());
  }
  return out;
}

template Matrix<float> images_to_batch<float>(std::span<const cv::Mat>);
template Matrix<double> images_to_batch<double>(std::span<const cv::Mat>);

PuSets make_pu_sets(std::span<const PatchArchive> benign, std::span<const PatchArchive> malignant, bool large_scale) {
  const int px = large_scale ? ingest::kLargePatchPx : ingest::kSmallPatchPx;
  PuSets sets{PatchBank(px), PatchBank(px)};
  for (const auto& a : benign) {
    for (const auto& p : a.pairs) sets.positive.add(large_scale ? p.large : p.small);
  }
  for (const auto& a : malignant) {
    for (const auto& p : a.pairs) sets.unlabeled.add(large_scale ? p.large : p.small);
  }
  return sets;
}

TrainedEncoder train_encoder(const PuSets& sets, const nn::EncoderSpec& spec, const VpuTrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  if (sets.positive.empty() || sets.unlabeled.empty()) throw ConfigError("stage 1 needs nonempty P and U sets");
  if (sets.positive.px() != spec.input_px || sets.unlabeled.px() != spec.input_px) {
    throw ShapeError("patch size does not match the encoder input");
  }

  Rng init_rng(derive_seed(cfg.seed, "init"));
  TrainedEncoder out{EncoderNet<float>(spec, init_rng), {}, {}};
  auto& net = out.model;
  nn::Adam<float> opt(net.parameters());
  const nn::StepSchedule sched{cfg.lr, cfg.lr_gamma, cfg.lr_step_epochs, cfg.lr_end};

  Rng rng(derive_seed(cfg.seed, "batches"));
  IndexStream positives(sets.positive.size(), rng);
  std::vector<std::size_t> u_order(sets.unlabeled.size());
  std::iota(u_order.begin(), u_order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = sched.at(epoch);
    shuffle(u_order, rng);
    EpochLog log{epoch + 1, 0, 0, 0, lr};
    int steps = 0;
    for (std::size_t start = 0; start < u_order.size(); start += bs) {
      const std::size_t n = std::min(bs, u_order.size() - start);
      std::vector<std::size_t> p_idx(n);
      for (auto& i : p_idx) i = positives.next();
      const auto xu = sets.unlabeled.batch<float>(std::span(u_order).subspan(start, n));
      const auto xp = sets.positive.batch<float>(p_idx);

      opt.zero_grad();
      const StepLoss loss = cfg.objective == Objective::kVariational ? variational_step(net, xp, xu, cfg, rng)
                                                                     : supervised_step(net, xp, xu);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "stage-1 loss diverged at epoch " << epoch + 1 << ", step " << steps + 1 << " (l_var=" << loss.l_var
            << ", l_reg=" << loss.l_reg << ", lr=" << lr << ")";
        throw DivergenceError(msg.str());
      }
      opt.step(lr);
      log.l_var += loss.l_var;
      log.l_reg += loss.l_reg;
      log.total += loss.total;
      ++steps;
    }
    log.l_var /= steps;
    log.l_reg /= steps;
    log.total /= steps;
    out.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch + 1) != cfg.snapshot_epochs.end()) {
      out.snapshots.emplace_back(epoch + 1, net);
    }
  }
  return out;
}

std::vector<double> malignancy_scores(const EncoderNet<float>& model, const PatchBank& bank) {
  constexpr std::size_t kChunk = 100;
  std::vector<double> out;
  out.reserve(bank.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < bank.size(); start += kChunk) {
    idx.resize(std::min(kChunk, bank.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto lp = model.forward(bank.batch<float>(idx)).log_prob;
    for (Index i = 0; i < lp.rows(); ++i) out.push_back(std::exp(static_cast<double>(lp(i, 1))));
  }
  return out;
}

SlideEmbedding export_embeddings(const EncoderNet<float>& small_model, const EncoderNet<float>& large_model,
                                 const PatchArchive& archive) {
  if (small_model.spec().input_px != archive.small_px || large_model.spec().input_px != archive.large_px) {
    throw ShapeError("encoder input sizes do not match archive '" + archive.slide_id + "'");
  }
  const Index k = static_cast<Index>(archive.pairs.size());
  SlideEmbedding e;
  e.slide_id = archive.slide_id;
  e.small.resize(k, small_model.spec().embed_dim);
  e.large.resize(k, large_model.spec().embed_dim);
  e.log_prob_small.resize(k, 2);
  e.log_prob_large.resize(k, 2);

  constexpr Index kChunk = 50;
  std::vector<cv::Mat> small, large;
  for (Index start = 0; start < k; start += kChunk) {
    const Index n = std::min(kChunk, k - start);
    small.clear();
    large.clear();
    for (Index i = start; i < start + n; ++i) {
      small.push_back(archive.pairs[i].small);
      large.push_back(archive.pairs[i].large);
    }
    const auto os = small_model.forward(images_to_batch<float>(small));
    const auto ol = large_model.forward(images_to_batch<float>(large));
    e.small.middleRows(start, n) = os.embedding;
    e.large.middleRows(start, n) = ol.embedding;
    e.log_prob_small.middleRows(start, n) = os.log_prob;
    e.log_prob_large.middleRows(start, n) = ol.log_prob;
  }
  return e;
}

void save_encoder(const std::filesystem::path& path, const EncoderNet<float>& model, const std::string& extra_config) {
  auto copy = model;
  nn::write_checkpoint(path, nn::make_checkpoint("encoder", model.spec().to_string() + extra_config, copy.parameters()));
}

EncoderNet<float> load_encoder(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("encoder checkpoint " + path.string() + " not found", "train-stage1");
  const auto ck = nn::read_checkpoint(path);
  if (ck.kind != "encoder") throw ShapeError(path.string() + " is not an encoder checkpoint");
  Rng rng(0);
  EncoderNet<float> net(nn::EncoderSpec::from_string(ck.config), rng);
  nn::load_parameters(ck, net.parameters());
  return net;
}

}  // namespace less::vpu
