#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "less/ingest.hpp"

namespace less {

/// The k sampled patch pairs of one slide.
///
/// Binary layout (little-endian):
///
///   magic "LESSPTCH", u32 version, str slide_id,
///   u32 count, u32 small_px, u32 large_px,
///   then per pair: i32 center_x, i32 center_y, u8 augmented,
///   u8 augmentation, i32 source, small_px*small_px*3 RGB bytes,
///   large_px*large_px*3 RGB bytes.
struct PatchArchive {
  std::string slide_id;
  int small_px = ingest::kSmallPatchPx;
  int large_px = ingest::kLargePatchPx;
  std::vector<ingest::PatchPair> pairs;
};

void write_archive(const std::filesystem::path& path, const PatchArchive& archive);
PatchArchive read_archive(const std::filesystem::path& path);

/// One line of the patch manifest produced by ingestion.
struct PatchManifestEntry {
  std::string slide_id;
  std::filesystem::path archive;  // relative to the manifest directory
  Subtype subtype = Subtype::kBenign;
  int n_candidates = 0;
  int n_kept = 0;
  int n_augmented = 0;
  bool usable = true;
};

/// Tab-separated: slide_id, archive, subtype, n_candidates, n_kept,
/// n_augmented, usable (0/1).
void write_patch_manifest(const std::filesystem::path& path, const std::vector<PatchManifestEntry>& entries);
std::vector<PatchManifestEntry> read_patch_manifest(const std::filesystem::path& path);

}  // namespace less
