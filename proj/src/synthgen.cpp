#include "less/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/algorithm/string.hpp>
#include <opencv2/imgproc.hpp>

#include "less/image.hpp"
#include "less/random.hpp"

namespace less::synth {

namespace {

// Largest cell semi-axis; cells are kept this far from region edges.
constexpr int kMaxCellRadius = 16;

enum class CellKind { kBenign, kAtypical, kMalignant };

cv::Scalar rgb(Rng& rng, double r0, double r1, double g0, double g1, double b0, double b1) {
  return {uniform(rng, r0, r1), uniform(rng, g0, g1), uniform(rng, b0, b1)};
}

// Morphology per kind: benign cells have small pale nuclei (N/C area ratio
// 0.08-0.15); malignant cells are larger with a high N/C ratio (0.45-0.7),
// dark coarse chromatin and a prominent nucleolus; atypical cells sit in
// between.
void draw_cell(cv::Mat& img, Rng& rng, cv::Point2d c, CellKind kind) {
  double a = 0, nc = 0;
  cv::Scalar cyto, nucleus;
  switch (kind) {
    case CellKind::kBenign:
      a = uniform(rng, 9, 13);
      nc = uniform(rng, 0.08, 0.15);
      cyto = rgb(rng, 200, 215, 165, 185, 200, 220);
      nucleus = rgb(rng, 110, 130, 80, 100, 140, 160);
      break;
    case CellKind::kAtypical:
      a = uniform(rng, 10, 14);
      nc = uniform(rng, 0.2, 0.3);
      cyto = rgb(rng, 195, 210, 160, 180, 195, 215);
      nucleus = rgb(rng, 85, 105, 60, 80, 115, 135);
      break;
    case CellKind::kMalignant:
      a = uniform(rng, 11, kMaxCellRadius);
      nc = uniform(rng, 0.45, 0.7);
      cyto = rgb(rng, 190, 205, 150, 170, 190, 210);
      nucleus = rgb(rng, 50, 70, 25, 45, 80, 100);
      break;
  }
  const double b = a * uniform(rng, 0.75, 1.0);
  const double angle = uniform(rng, 0, 180);
  const auto center = cv::Point(static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)));
  cv::ellipse(img, center, cv::Size(static_cast<int>(a), static_cast<int>(b)), angle, 0, 360, cyto,
              cv::FILLED, cv::LINE_AA);
  const double k = std::sqrt(nc);
  const double off = a * (1 - k) * 0.3;
  const cv::Point nc_center(center.x + static_cast<int>(uniform(rng, -off, off)),
                            center.y + static_cast<int>(uniform(rng, -off, off)));
  cv::ellipse(img, nc_center, cv::Size(std::max(1, static_cast<int>(a * k)), std::max(1, static_cast<int>(b * k))),
              angle + uniform(rng, -20, 20), 0, 360, nucleus, cv::FILLED, cv::LINE_AA);
  if (kind == CellKind::kMalignant) {
    const int specks = 3 + static_cast<int>(uniform_index(rng, 4));
    for (int i = 0; i < specks; ++i) {
      const cv::Point p(nc_center.x + static_cast<int>(uniform(rng, -a * k * 0.6, a * k * 0.6)),
                        nc_center.y + static_cast<int>(uniform(rng, -b * k * 0.6, b * k * 0.6)));
      cv::circle(img, p, 1, cv::Scalar(35, 18, 55), cv::FILLED, cv::LINE_AA);
    }
    cv::circle(img, nc_center, 2, cv::Scalar(25, 10, 45), cv::FILLED, cv::LINE_AA);
  }
}

cv::Mat render_background(int px, Rng& rng, std::uint64_t seed) {
  const cv::Scalar base = rgb(rng, 236, 244, 234, 242, 238, 246);
  const int g = px / 256 + 2;
  cv::Mat coarse(g, g, CV_32F);
  for (int i = 0; i < g * g; ++i) coarse.at<float>(i) = static_cast<float>(uniform(rng, -4, 4));
  cv::Mat mottle;
  cv::resize(coarse, mottle, cv::Size(px, px), 0, 0, cv::INTER_CUBIC);
  cv::Mat noise(px, px, CV_32FC3);
  cv::RNG cvrng(seed);
  cvrng.fill(noise, cv::RNG::NORMAL, 0.0, 2.0);
  cv::Mat mottle3;
  cv::merge(std::vector<cv::Mat>{mottle, mottle, mottle}, mottle3);
  cv::Mat f = noise + mottle3 + base;
  cv::Mat img;
  f.convertTo(img, CV_8UC3);
  return img;
}

std::string slide_id(Subtype s, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%04d", std::string(to_string(s)).c_str(), index);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_slides_per_subtype < 1) throw ConfigError("synth.n_slides_per_subtype must be >= 1");
  if (slide_px < 512) throw ConfigError("synth.slide_px must be >= 512");
  if (!(malignant_patch_fraction > 0.0 && malignant_patch_fraction <= 1.0)) {
    throw ConfigError("synth.malignant_patch_fraction must lie in (0, 1]");
  }
  if (!(cell_density > 0.0)) throw ConfigError("synth.cell_density must be > 0");
  if (region_px < 2 * kMaxCellRadius + 2 || region_px > slide_px) {
    throw ConfigError("synth.region_px out of range");
  }
  if (!(blank_region_fraction >= 0.0 && blank_region_fraction < 1.0)) {
    throw ConfigError("synth.blank_region_fraction must lie in [0, 1)");
  }
  if (workers < 1) throw ConfigError("synth.workers must be >= 1");
}

RegionOracle::RegionOracle(int slide_px, int region_px)
    : slide_px_(slide_px), region_px_(region_px), grid_(slide_px / region_px) {
  labels_.assign(static_cast<std::size_t>(grid_) * grid_, PatchClass::kBenign);
  has_cells_.assign(labels_.size(), 1);
}

void RegionOracle::set(int gx, int gy, PatchClass c, bool has_cells) {
  labels_[index(gx, gy)] = c;
  has_cells_[index(gx, gy)] = has_cells ? 1 : 0;
}

PatchClass RegionOracle::label_at(Point p) const {
  if (p.x < 0 || p.y < 0 || p.x >= slide_px_ || p.y >= slide_px_) {
    throw std::out_of_range("oracle lookup outside slide bounds");
  }
  const int gx = std::min(p.x / region_px_, grid_ - 1);
  const int gy = std::min(p.y / region_px_, grid_ - 1);
  return at_region(gx, gy);
}

PatchClass RegionOracle::window_label(Point tl, int size) const {
  const int x1 = std::min(tl.x + size, slide_px_) - 1;
  const int y1 = std::min(tl.y + size, slide_px_) - 1;
  const int gx0 = std::clamp(tl.x / region_px_, 0, grid_ - 1);
  const int gy0 = std::clamp(tl.y / region_px_, 0, grid_ - 1);
  const int gx1 = std::clamp(x1 / region_px_, 0, grid_ - 1);
  const int gy1 = std::clamp(y1 / region_px_, 0, grid_ - 1);
  for (int gy = gy0; gy <= gy1; ++gy) {
    for (int gx = gx0; gx <= gx1; ++gx) {
      if (at_region(gx, gy) == PatchClass::kMalignant && region_has_cells(gx, gy)) {
        return PatchClass::kMalignant;
      }
    }
  }
  return PatchClass::kBenign;
}

std::size_t RegionOracle::malignant_count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), PatchClass::kMalignant));
}

double RegionOracle::malignant_fraction() const {
  return labels_.empty() ? 0.0 : static_cast<double>(malignant_count()) / labels_.size();
}

std::vector<RegionOracle::Entry> RegionOracle::entries() const {
  std::vector<Entry> out;
  out.reserve(labels_.size());
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      out.push_back({{gx * region_px_ + region_px_ / 2, gy * region_px_ + region_px_ / 2},
                     at_region(gx, gy)});
    }
  }
  return out;
}

std::vector<SlidePlan> plan_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SlidePlan> plans;
  for (auto s : kAllSubtypes) {
    for (int i = 0; i < cfg.n_slides_per_subtype; ++i) {
      std::string id = slide_id(s, i);
      const auto seed = derive_seed(cfg.texture_seed, id);
      plans.push_back({std::move(id), s, seed});
    }
  }
  return plans;
}

SynthSlide generate_slide(const SynthConfig& cfg, const SlidePlan& plan) {
  cfg.validate();
  Rng rng(plan.seed);
  SynthSlide slide;
  slide.id = plan.id;
  slide.subtype = plan.subtype;
  slide.seed = plan.seed;
  slide.oracle = RegionOracle(cfg.slide_px, cfg.region_px);
  auto& oracle = slide.oracle;
  const int grid = oracle.grid();
  const std::size_t n = oracle.size();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<std::uint8_t> blank(n, 0);
  shuffle(order, rng);
  const auto n_blank = static_cast<std::size_t>(std::lround(cfg.blank_region_fraction * n));
  for (std::size_t i = 0; i < n_blank; ++i) blank[order[i]] = 1;

  double fraction = 0.0;
  if (plan.subtype == Subtype::kMalignant) fraction = cfg.malignant_patch_fraction;
  if (plan.subtype == Subtype::kSuspicious) fraction = cfg.malignant_patch_fraction / 2.0;
  std::vector<PatchClass> cls(n, PatchClass::kBenign);
  if (fraction > 0.0) {
    const auto m = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * n)), 1, n);
    shuffle(order, rng);
    for (std::size_t i = 0; i < m; ++i) cls[order[i]] = PatchClass::kMalignant;
  }
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const std::size_t i = static_cast<std::size_t>(gy) * grid + gx;
      oracle.set(gx, gy, cls[i], blank[i] == 0);
    }
  }

  slide.image = render_background(cfg.slide_px, rng, plan.seed);
  const double lambda = cfg.cell_density * cfg.region_px * cfg.region_px / 1e6;
  std::poisson_distribution<int> count_dist(lambda);
  const double lo = kMaxCellRadius, hi = cfg.region_px - kMaxCellRadius;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      if (!oracle.region_has_cells(gx, gy)) continue;
      const bool malignant = oracle.at_region(gx, gy) == PatchClass::kMalignant;
      const int cells = count_dist(rng);
      for (int c = 0; c < cells; ++c) {
        const cv::Point2d p(gx * cfg.region_px + uniform(rng, lo, hi), gy * cfg.region_px + uniform(rng, lo, hi));
        CellKind kind = CellKind::kBenign;
        if (malignant) {
          kind = CellKind::kMalignant;
        } else if (plan.subtype == Subtype::kAtypical && uniform01(rng) < 0.3) {
          kind = CellKind::kAtypical;
        }
        draw_cell(slide.image, rng, p, kind);
      }
    }
  }
  cv::GaussianBlur(slide.image, slide.image, cv::Size(3, 3), 0.8);
  return slide;
}

PatchClass oracle_patch_label(const SynthSlide& slide, Point center) {
  return slide.oracle.label_at(center);
}

void append_oracle(std::ostream& os, const SynthSlide& slide) {
  for (const auto& e : slide.oracle.entries()) {
    os << slide.id << '\t' << e.center.x << '\t' << e.center.y << '\t' << to_string(e.label) << '\n';
  }
}

CorpusOutput generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  const auto plans = plan_corpus(cfg);  // validates
  std::filesystem::create_directories(out_dir / "slides");

  std::vector<std::string> oracle_text(plans.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        const SynthSlide slide = generate_slide(cfg, plans[i]);
        write_rgb(out_dir / "slides" / (slide.id + ".png"), slide.image);
        std::ostringstream os;
        append_oracle(os, slide);
        oracle_text[i] = os.str();
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);

  CorpusOutput out;
  for (const auto& p : plans) {
    out.records.push_back({p.id, std::filesystem::path("slides") / (p.id + ".png"),
                           coarse_label_of(p.subtype), p.subtype, p.seed});
  }
  out.manifest = out_dir / "manifest.tsv";
  out.oracle = out_dir / "oracle.tsv";
  write_manifest(out.manifest, out.records);
  std::ofstream os(out.oracle);
  os << "# slide_id\tx\ty\tclass\n";
  for (const auto& t : oracle_text) os << t;
  for (auto& r : out.records) r.uri = out_dir / r.uri;
  return out;
}

const std::vector<RegionOracle::Entry>* OracleTable::find(const std::string& id) const {
  for (std::size_t i = 0; i < slide_ids.size(); ++i) {
    if (slide_ids[i] == id) return &entries[i];
  }
  return nullptr;
}

OracleTable read_oracle(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read oracle " + path.string());
  OracleTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of("\t"));
    if (f.size() != 4) throw std::runtime_error("malformed oracle line: " + line);
    if (t.slide_ids.empty() || t.slide_ids.back() != f[0]) {
      t.slide_ids.push_back(f[0]);
      t.entries.emplace_back();
    }
    t.entries.back().push_back({{std::stoi(f[1]), std::stoi(f[2])}, parse_patch_class(f[3])});
  }
  return t;
}

PatchClass nearest_label(const std::vector<RegionOracle::Entry>& entries, Point p) {
  if (entries.empty()) throw std::out_of_range("empty oracle");
  long best = -1;
  PatchClass label = PatchClass::kBenign;
  for (const auto& e : entries) {
    const long dx = e.center.x - p.x, dy = e.center.y - p.y;
    const long d = dx * dx + dy * dy;
    if (best < 0 || d <= best) {  // ties go to the later region, as in label_at
      best = d;
      label = e.label;
    }
  }
  return label;
}

}  // namespace less::synth
