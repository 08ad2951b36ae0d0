#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "less/manifest.hpp"
#include "less/types.hpp"

namespace less::ingest {

/// RGB intensity cutoffs for discarding uninformative patches.
struct FilterThresholds {
  double th1 = 236.0;  // mean above this: background
  double th2 = 10.0;   // stddev below this: blank or blurry
  double th3 = 236.0;  // central-region mean above this: cells only at the border

  void validate() const;
};

enum class FilterVerdict : std::uint8_t { kKeep, kBackground, kBlank, kBorderOnly };

/// "keep", "th1", "th2" or "th3".
std::string_view verdict_name(FilterVerdict v);

struct FilterResult {
  FilterVerdict verdict = FilterVerdict::kKeep;
  double mean = 0;
  double stddev = 0;
  double center_mean = 0;
  bool kept() const { return verdict == FilterVerdict::kKeep; }
};

inline constexpr int kSmallPatchPx = 128;
inline constexpr int kLargePatchPx = 256;
inline constexpr int kTileStride = 64;

/// Edge of the centered square covering half the patch area.
constexpr int central_region_px(int patch_px) {
  // floor(patch_px / sqrt(2)) without floating point in a constexpr.
  int s = 0;
  while (2 * (s + 1) * (s + 1) <= patch_px * patch_px) ++s;
  return s;
}

/// Applies the three tests in order (th1, th2, th3) over all pixels and
/// channels of a 128x128 8-bit RGB patch; the first failing test names the
/// verdict. Throws ShapeError for any other shape or depth.
FilterResult filter_patch(const cv::Mat& patch, const FilterThresholds& th);

/// Top-left corners of every full patch_px window at the given stride, in
/// row-major order. Windows that would cross the image border are dropped.
std::vector<Point> tile_positions(int width, int height, int patch_px = kSmallPatchPx,
                                  int stride = kTileStride);

/// Reads the slide image and enumerates candidate windows.
/// Throws IngestionError if the image cannot be read.
struct TiledSlide {
  cv::Mat image;
  std::vector<Point> positions;
};
TiledSlide tile_slide(const SlideRecord& slide, int patch_px = kSmallPatchPx, int stride = kTileStride);

enum class Augmentation : std::uint8_t { kNone, kRot90, kRot180, kRot270, kFlipLR, kFlipTB, kZoom };
std::string_view augmentation_name(Augmentation a);

/// Co-centered small and large patches from one slide location.
struct PatchPair {
  std::string slide_id;
  Point center;
  cv::Mat small;  // 128x128 RGB
  cv::Mat large;  // 256x256 RGB, mirror-padded at slide borders
  bool augmented = false;
  Augmentation augmentation = Augmentation::kNone;
  int source = -1;  // index into the kept list
};

/// Square crop of edge `size` centered at `center`; regions outside the
/// image are filled by mirror reflection.
cv::Mat crop_mirror(const cv::Mat& image, Point center, int size);

/// Picks exactly `k` pairs from the kept windows (given as top-left corners).
/// With at least k windows, a uniform sample without replacement; otherwise
/// every window once plus (k - n) augmented copies of randomly drawn
/// windows (rotation, left-right flip, top-bottom flip or zoom). The large
/// patch always receives the same transform as its small patch.
/// Deterministic in `seed`. Throws IngestionError when `kept` is empty.
std::vector<PatchPair> sample_patches(const cv::Mat& slide, std::string_view slide_id,
                                      const std::vector<Point>& kept, int k, std::uint64_t seed,
                                      int small_px = kSmallPatchPx, int large_px = kLargePatchPx);

struct IngestConfig {
  FilterThresholds thresholds;
  int k = 100;
  int small_px = kSmallPatchPx;
  int large_px = kLargePatchPx;
  int stride = kTileStride;
  std::uint64_t seed = 0;
};

struct IngestResult {
  std::string slide_id;
  int n_candidates = 0;
  int n_kept = 0;
  std::array<int, 4> verdict_counts{};
  std::vector<PatchPair> pairs;
  int n_augmented() const;
};

/// tile -> filter -> sample for one slide. The sampling seed is derived
/// from cfg.seed and the slide id.
IngestResult ingest_slide(const SlideRecord& slide, const IngestConfig& cfg);

/// Same, for an image already in memory.
IngestResult ingest_image(const cv::Mat& image, const std::string& slide_id, const IngestConfig& cfg);

}  // namespace less::ingest
