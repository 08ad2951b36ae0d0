#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "less/types.hpp"

namespace less {

/// One slide of a corpus. `uri` is resolved relative to the manifest's
/// directory when it is not absolute.
struct SlideRecord {
  std::string id;
  std::filesystem::path uri;
  CoarseLabel coarse_label = CoarseLabel::kLowRisk;
  Subtype subtype = Subtype::kBenign;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the coarse label disagrees with the subtype.
  void validate() const;
};

/// Tab-separated corpus manifest:
///
///   # less corpus manifest v1
///   id<TAB>subtype<TAB>coarse_label<TAB>seed<TAB>uri
///
/// Lines starting with '#' are comments.
void write_manifest(const std::filesystem::path& path, const std::vector<SlideRecord>& records);

/// Reads and validates a manifest; relative URIs become absolute.
std::vector<SlideRecord> read_manifest(const std::filesystem::path& path);

}  // namespace less
