#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "less/manifest.hpp"
#include "less/types.hpp"

namespace less::synth {

/// Parameters of the synthetic slide corpus.
struct SynthConfig {
  int n_slides_per_subtype = 50;
  int slide_px = 4096;
  double malignant_patch_fraction = 0.3;
  std::uint64_t texture_seed = 0;
  double cell_density = 600.0;  // cells per 1000x1000 px
  int region_px = 128;          // oracle region edge length
  double blank_region_fraction = 0.1;
  int workers = 1;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Ground-truth labels on a regular grid of square regions. Every cell of
/// a slide is drawn fully inside one region and takes that region's class.
class RegionOracle {
 public:
  struct Entry {
    Point center;
    PatchClass label;
  };

  RegionOracle() = default;
  RegionOracle(int slide_px, int region_px);

  int slide_px() const { return slide_px_; }
  int region_px() const { return region_px_; }
  int grid() const { return grid_; }
  std::size_t size() const { return labels_.size(); }

  void set(int gx, int gy, PatchClass c, bool has_cells);
  PatchClass at_region(int gx, int gy) const { return labels_[index(gx, gy)]; }
  bool region_has_cells(int gx, int gy) const { return has_cells_[index(gx, gy)] != 0; }

  /// Label of the region whose center is nearest to `p`. Points exactly on a
  /// region boundary resolve to the region that starts there.
  /// Throws std::out_of_range when `p` lies outside the slide.
  PatchClass label_at(Point p) const;

  /// Malignant iff the window [x0, x0+size) x [y0, y0+size) overlaps a
  /// malignant region that contains cells.
  PatchClass window_label(Point top_left, int size) const;

  std::size_t malignant_count() const;
  double malignant_fraction() const;
  std::vector<Entry> entries() const;

 private:
  std::size_t index(int gx, int gy) const { return static_cast<std::size_t>(gy) * grid_ + gx; }

  int slide_px_ = 0;
  int region_px_ = 0;
  int grid_ = 0;
  std::vector<PatchClass> labels_;
  std::vector<std::uint8_t> has_cells_;
};

struct SynthSlide {
  std::string id;
  Subtype subtype = Subtype::kBenign;
  std::uint64_t seed = 0;
  cv::Mat image;  // RGB
  RegionOracle oracle;
};

/// Identity of every slide the corpus will contain, in manifest order.
struct SlidePlan {
  std::string id;
  Subtype subtype;
  std::uint64_t seed;
};
std::vector<SlidePlan> plan_corpus(const SynthConfig& cfg);

/// Renders one slide. Pure function of (cfg, plan).
SynthSlide generate_slide(const SynthConfig& cfg, const SlidePlan& plan);

/// Pure lookup into the slide's oracle.
PatchClass oracle_patch_label(const SynthSlide& slide, Point center);

struct CorpusOutput {
  std::filesystem::path manifest;
  std::filesystem::path oracle;
  std::vector<SlideRecord> records;
};

/// Writes slides/<id>.png, manifest.tsv and oracle.tsv under `out_dir`.
/// The config is validated before anything is written. Slides are rendered
/// by `cfg.workers` threads; output is identical for any worker count.
CorpusOutput generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Oracle file: `slide_id<TAB>x<TAB>y<TAB>class` per region center.
void append_oracle(std::ostream& os, const SynthSlide& slide);

/// slide id -> entries, as read back from an oracle file.
struct OracleTable {
  std::vector<std::string> slide_ids;
  std::vector<std::vector<RegionOracle::Entry>> entries;
  const std::vector<RegionOracle::Entry>* find(const std::string& id) const;
};
OracleTable read_oracle(const std::filesystem::path& path);

/// Nearest-entry lookup in a table read from disk.
PatchClass nearest_label(const std::vector<RegionOracle::Entry>& entries, Point p);

}  // namespace less::synth
