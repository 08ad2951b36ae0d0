#include "less/ingest.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "less/image.hpp"
#include "less/random.hpp"

namespace less::ingest {

namespace {

struct Moments {
  double mean = 0, stddev = 0;
};

Moments moments(const cv::Mat& m) {
  cv::Scalar mean, sd;
  cv::meanStdDev(m.reshape(1), mean, sd);
  return {mean[0], sd[0]};
}

cv::Mat apply_geometric(const cv::Mat& src, Augmentation a) {
  cv::Mat dst;
  switch (a) {
    case Augmentation::kRot90: cv::rotate(src, dst, cv::ROTATE_90_CLOCKWISE); break;
    case Augmentation::kRot180: cv::rotate(src, dst, cv::ROTATE_180); break;
    case Augmentation::kRot270: cv::rotate(src, dst, cv::ROTATE_90_COUNTERCLOCKWISE); break;
    case Augmentation::kFlipLR: cv::flip(src, dst, 1); break;
    case Augmentation::kFlipTB: cv::flip(src, dst, 0); break;
    default: dst = src.clone(); break;
  }
  return dst;
}

// Crop of edge round(size*scale) whose center is offset by (dx, dy) from the
// patch center, resized back to `size`.
cv::Mat zoom(const cv::Mat& src, double scale, double dx, double dy) {
  const int size = src.cols;
  const int side = std::max(1, static_cast<int>(std::lround(size * scale)));
  int x0 = static_cast<int>(std::lround(size / 2.0 + dx - side / 2.0));
  int y0 = static_cast<int>(std::lround(size / 2.0 + dy - side / 2.0));
  x0 = std::clamp(x0, 0, size - side);
  y0 = std::clamp(y0, 0, size - side);
  cv::Mat out;
  cv::resize(src(cv::Rect(x0, y0, side, side)), out, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  return out;
}

}  // namespace

void FilterThresholds::validate() const {
  for (double t : {th1, th2, th3}) {
    if (!(t >= 0.0 && t <= 255.0)) throw ConfigError("filter thresholds must lie in [0, 255]");
  }
}

std::string_view verdict_name(FilterVerdict v) {
  switch (v) {
    case FilterVerdict::kKeep: return "keep";
    case FilterVerdict::kBackground: return "th1";
    case FilterVerdict::kBlank: return "th2";
    case FilterVerdict::kBorderOnly: return "th3";
  }
  return "?";
}

std::string_view augmentation_name(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kRot90: return "rot90";
    case Augmentation::kRot180: return "rot180";
    case Augmentation::kRot270: return "rot270";
    case Augmentation::kFlipLR: return "flip_lr";
    case Augmentation::kFlipTB: return "flip_tb";
    case Augmentation::kZoom: return "zoom";
  }
  return "?";
}

FilterResult filter_patch(const cv::Mat& patch, const FilterThresholds& th) {
  if (patch.rows != kSmallPatchPx || patch.cols != kSmallPatchPx || patch.type() != CV_8UC3) {
    throw ShapeError("filter_patch expects a 128x128 8-bit RGB patch");
  }
  FilterResult r;
  const auto all = moments(patch);
  r.mean = all.mean;
  r.stddev = all.stddev;
  constexpr int c = central_region_px(kSmallPatchPx);
  constexpr int off = (kSmallPatchPx - c) / 2;
  r.center_mean = moments(patch(cv::Rect(off, off, c, c))).mean;
  if (r.mean > th.th1) {
    r.verdict = FilterVerdict::kBackground;
  } else if (r.stddev < th.th2) {
    r.verdict = FilterVerdict::kBlank;
  } else if (r.center_mean > th.th3) {
    r.verdict = FilterVerdict::kBorderOnly;
  }
  return r;
}

std::vector<Point> tile_positions(int width, int height, int patch_px, int stride) {
  std::vector<Point> out;
  if (patch_px <= 0 || stride <= 0) return out;
  for (int y = 0; y + patch_px <= height; y += stride) {
    for (int x = 0; x + patch_px <= width; x += stride) out.push_back({x, y});
  }
  return out;
}

TiledSlide tile_slide(const SlideRecord& slide, int patch_px, int stride) {
  TiledSlide t;
  try {
    t.image = read_rgb(slide.uri);
  } catch (const std::exception& e) {
    throw IngestionError(slide.id, e.what());
  }
  t.positions = tile_positions(t.image.cols, t.image.rows, patch_px, stride);
  return t;
}

cv::Mat crop_mirror(const cv::Mat& image, Point center, int size) {
  const int x0 = center.x - size / 2, y0 = center.y - size / 2;
  const int ix0 = std::max(0, x0), iy0 = std::max(0, y0);
  const int ix1 = std::min(image.cols, x0 + size), iy1 = std::min(image.rows, y0 + size);
  if (ix1 <= ix0 || iy1 <= iy0) throw ShapeError("crop center outside the image");
  const cv::Mat roi = image(cv::Rect(ix0, iy0, ix1 - ix0, iy1 - iy0));
  if (ix1 - ix0 == size && iy1 - iy0 == size) return roi.clone();
  cv::Mat out;
  cv::copyMakeBorder(roi, out, iy0 - y0, y0 + size - iy1, ix0 - x0, x0 + size - ix1,
                     cv::BORDER_REFLECT_101);
  return out;
}

std::vector<PatchPair> sample_patches(const cv::Mat& slide, std::string_view slide_id,
                                      const std::vector<Point>& kept, int k, std::uint64_t seed,
                                      int small_px, int large_px) {
  if (kept.empty()) throw IngestionError(std::string(slide_id), "no patch passed the filters; slide unusable");
  if (k < 1) throw ConfigError("ingest.k must be >= 1");
  Rng rng(seed);
  std::vector<int> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle(order, rng);

  auto original = [&](int idx) {
    const Point tl = kept[idx];
    PatchPair p;
    p.slide_id = std::string(slide_id);
    p.center = {tl.x + small_px / 2, tl.y + small_px / 2};
    p.small = slide(cv::Rect(tl.x, tl.y, small_px, small_px)).clone();
    p.large = crop_mirror(slide, p.center, large_px);
    p.source = idx;
    return p;
  };

  std::vector<PatchPair> out;
  out.reserve(k);
  const int n_orig = std::min<int>(k, static_cast<int>(order.size()));
  for (int i = 0; i < n_orig; ++i) out.push_back(original(order[i]));

  for (int i = n_orig; i < k; ++i) {
    PatchPair p = original(order[uniform_index(rng, order.size())]);
    p.augmented = true;
    switch (uniform_index(rng, 4)) {
      case 0: {
        static constexpr Augmentation rot[] = {Augmentation::kRot90, Augmentation::kRot180,
                                               Augmentation::kRot270};
        p.augmentation = rot[uniform_index(rng, 3)];
        break;
      }
      case 1: p.augmentation = Augmentation::kFlipLR; break;
      case 2: p.augmentation = Augmentation::kFlipTB; break;
      default: p.augmentation = Augmentation::kZoom; break;
    }
    if (p.augmentation == Augmentation::kZoom) {
      const double scale = uniform(rng, 0.8, 1.0);
      const double slack = small_px * (1.0 - scale) / 2.0;
      const double dx = uniform(rng, -slack, slack), dy = uniform(rng, -slack, slack);
      // Same relative crop on both scales keeps them co-centered.
      p.small = zoom(p.small, scale, dx, dy);
      p.large = zoom(p.large, scale, dx * large_px / small_px, dy * large_px / small_px);
    } else {
      p.small = apply_geometric(p.small, p.augmentation);
      p.large = apply_geometric(p.large, p.augmentation);
    }
    out.push_back(std::move(p));
  }
  return out;
}

int IngestResult::n_augmented() const {
  return static_cast<int>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.augmented; }));
}

IngestResult ingest_image(const cv::Mat& image, const std::string& slide_id, const IngestConfig& cfg) {
  cfg.thresholds.validate();
  if (image.empty() || image.type() != CV_8UC3) throw IngestionError(slide_id, "expected an 8-bit RGB image");
  IngestResult r;
  r.slide_id = slide_id;
  const auto positions = tile_positions(image.cols, image.rows, cfg.small_px, cfg.stride);
  r.n_candidates = static_cast<int>(positions.size());
  std::vector<Point> kept;
  for (const auto& tl : positions) {
    const auto f = filter_patch(image(cv::Rect(tl.x, tl.y, cfg.small_px, cfg.small_px)), cfg.thresholds);
    ++r.verdict_counts[static_cast<int>(f.verdict)];
    if (f.kept()) kept.push_back(tl);
  }
  r.n_kept = static_cast<int>(kept.size());
  r.pairs = sample_patches(image, slide_id, kept, cfg.k, derive_seed(cfg.seed, slide_id), cfg.small_px,
                           cfg.large_px);
  return r;
}

IngestResult ingest_slide(const SlideRecord& slide, const IngestConfig& cfg) {
  const auto tiled = tile_slide(slide, cfg.small_px, cfg.stride);
  return ingest_image(tiled.image, slide.id, cfg);
}

}  // namespace less::ingest
