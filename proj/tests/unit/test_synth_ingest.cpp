#include <filesystem>
#include <set>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "less/errors.hpp"
#include "less/ingest.hpp"
#include "less/synthgen.hpp"

using namespace less;
using namespace less::ingest;
using namespace less::synth;

namespace {

SynthConfig small_cfg() {
  SynthConfig c;
  c.n_slides_per_subtype = 2;
  c.slide_px = 512;
  return c;
}

cv::Mat solid(int px, cv::Scalar v) { return cv::Mat(px, px, CV_8UC3, v); }

TEST(Synth, PlanHasEverySubtypeAndUniqueIds) {
  const auto plans = plan_corpus(small_cfg());
  ASSERT_EQ(plans.size(), 8u);
  std::set<std::string> ids;
  std::set<Subtype> subtypes;
  for (const auto& p : plans) {
    ids.insert(p.id);
    subtypes.insert(p.subtype);
  }
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_EQ(subtypes.size(), 4u);
}

TEST(Synth, SlidesAreDeterministic) {
  const auto cfg = small_cfg();
  const auto plan = plan_corpus(cfg)[6];
  const auto a = generate_slide(cfg, plan), b = generate_slide(cfg, plan);
  EXPECT_EQ(cv::norm(a.image, b.image, cv::NORM_INF), 0.0);
  EXPECT_EQ(a.image.rows, 512);
  EXPECT_EQ(a.image.type(), CV_8UC3);
}

TEST(Synth, MalignantFractionPerSubtype) {
  auto cfg = small_cfg();
  cfg.malignant_patch_fraction = 1.0;
  for (const auto& plan : plan_corpus(cfg)) {
    const auto s = generate_slide(cfg, plan);
    const double f = s.oracle.malignant_fraction();
    switch (plan.subtype) {
      case Subtype::kBenign:
      case Subtype::kAtypical: EXPECT_EQ(s.oracle.malignant_count(), 0u); break;
      case Subtype::kSuspicious: EXPECT_NEAR(f, 0.5, 0.07); break;
      case Subtype::kMalignant: EXPECT_DOUBLE_EQ(f, 1.0); break;
    }
  }
}

TEST(Synth, RejectsBadConfig) {
  auto c = small_cfg();
  c.malignant_patch_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_cfg();
  c.slide_px = 100;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Synth, OracleLookupAndWindowLabel) {
  RegionOracle o(512, 128);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) o.set(x, y, PatchClass::kBenign, true);
  o.set(2, 1, PatchClass::kMalignant, true);
  EXPECT_EQ(o.label_at({300, 200}), PatchClass::kMalignant);
  EXPECT_EQ(o.label_at({256, 128}), PatchClass::kMalignant);  // boundary goes to the region starting there
  EXPECT_EQ(o.label_at({255, 128}), PatchClass::kBenign);
  EXPECT_EQ(o.window_label({200, 100}, 128), PatchClass::kMalignant);
  EXPECT_EQ(o.window_label({0, 0}, 128), PatchClass::kBenign);
  EXPECT_THROW(o.label_at({600, 0}), std::out_of_range);
  o.set(2, 1, PatchClass::kMalignant, false);
  EXPECT_EQ(o.window_label({200, 100}, 128), PatchClass::kBenign);
}

TEST(Tiling, CountsAtBorders) {
  EXPECT_EQ(tile_positions(256, 256).size(), 9u);
  EXPECT_EQ(tile_positions(128, 128).size(), 1u);
  EXPECT_EQ(tile_positions(127, 500).size(), 0u);
  const auto p = tile_positions(320, 192);
  ASSERT_EQ(p.size(), 8u);
  EXPECT_EQ(p[1].x, 64);
  EXPECT_EQ(p[5].y, 64);
}

TEST(Filter, VerdictOrder) {
  const FilterThresholds th;
  EXPECT_EQ(filter_patch(solid(128, {250, 250, 250}), th).verdict, FilterVerdict::kBackground);
  EXPECT_EQ(filter_patch(solid(128, {120, 120, 120}), th).verdict, FilterVerdict::kBlank);

  // Cells only along the border: bright centre, dark frame.
  cv::Mat border = solid(128, {250, 250, 250});
  cv::rectangle(border, {0, 0}, {127, 127}, {0, 0, 0}, 20);
  const auto r = filter_patch(border, th);
  EXPECT_EQ(r.verdict, FilterVerdict::kBorderOnly) << r.mean << " " << r.center_mean;

  // Dark blob in the centre is kept.
  cv::Mat center = solid(128, {240, 240, 240});
  cv::circle(center, {64, 64}, 30, {40, 40, 90}, cv::FILLED);
  EXPECT_TRUE(filter_patch(center, th).kept());
  EXPECT_THROW(filter_patch(solid(64, {0, 0, 0}), th), ShapeError);
  EXPECT_EQ(central_region_px(128), 90);
}

TEST(Sampling, AugmentsOnlyWhenShort) {
  cv::Mat slide(1024, 1024, CV_8UC3);
  cv::randu(slide, 0, 255);
  const auto all = tile_positions(1024, 1024);  // 225 windows
  for (int kept : {1, 60, 100, 150}) {
    const std::vector<Point> sub(all.begin(), all.begin() + kept);
    const auto pairs = sample_patches(slide, "s", sub, 100, 7);
    ASSERT_EQ(pairs.size(), 100u);
    int aug = 0;
    for (const auto& p : pairs) {
      aug += p.augmented ? 1 : 0;
      EXPECT_EQ(p.small.rows, 128);
      EXPECT_EQ(p.large.rows, 256);
    }
    EXPECT_EQ(aug, std::max(0, 100 - kept)) << kept;
  }
  const std::vector<Point> sub(all.begin(), all.begin() + 60);
  const auto a = sample_patches(slide, "s", sub, 100, 9), b = sample_patches(slide, "s", sub, 100, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].augmentation, b[i].augmentation);
    EXPECT_EQ(cv::norm(a[i].large, b[i].large, cv::NORM_INF), 0.0);
  }
  EXPECT_THROW(sample_patches(slide, "s", {}, 100, 1), IngestionError);
}

TEST(Sampling, LargePatchIsCoCentered) {
  cv::Mat slide(512, 512, CV_8UC3);
  cv::randu(slide, 0, 255);
  const auto pairs = sample_patches(slide, "s", {{192, 192}}, 1, 3);
  ASSERT_EQ(pairs.size(), 1u);
  const cv::Mat inner = pairs[0].large(cv::Rect(64, 64, 128, 128));
  EXPECT_EQ(cv::norm(inner, pairs[0].small, cv::NORM_INF), 0.0);
}

TEST(Sampling, MirrorCropAtBorder) {
  cv::Mat img(8, 8, CV_8UC3);
  cv::randu(img, 0, 255);
  const cv::Mat c = crop_mirror(img, {0, 0}, 4);
  ASSERT_EQ(c.rows, 4);
  EXPECT_EQ(c.at<cv::Vec3b>(2, 2), img.at<cv::Vec3b>(0, 0));
}

TEST(Ingest, EndToEndOnSyntheticSlide) {
  const auto cfg = small_cfg();
  const auto s = generate_slide(cfg, plan_corpus(cfg)[0]);
  IngestConfig ic;
  ic.k = 20;
  const auto r = ingest_image(s.image, s.id, ic);
  EXPECT_EQ(r.n_candidates, 49);
  EXPECT_GT(r.n_kept, 0);
  EXPECT_EQ(r.pairs.size(), 20u);
  int total = 0;
  for (int v : r.verdict_counts) total += v;
  EXPECT_EQ(total, r.n_candidates);
}

}  // namespace
