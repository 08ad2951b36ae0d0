#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "less/errors.hpp"

namespace less {

enum class Subtype : std::uint8_t { kBenign, kAtypical, kSuspicious, kMalignant };
enum class CoarseLabel : std::uint8_t { kLowRisk, kHighRisk };
enum class PatchClass : std::uint8_t { kBenign, kMalignant };

inline constexpr std::array<Subtype, 4> kAllSubtypes{Subtype::kBenign, Subtype::kAtypical,
                                                     Subtype::kSuspicious, Subtype::kMalignant};

/// benign/atypical are low risk; suspicious/malignant are high risk.
constexpr CoarseLabel coarse_label_of(Subtype s) noexcept {
  return (s == Subtype::kSuspicious || s == Subtype::kMalignant) ? CoarseLabel::kHighRisk
                                                                  : CoarseLabel::kLowRisk;
}

constexpr int label_index(CoarseLabel c) noexcept { return c == CoarseLabel::kHighRisk ? 1 : 0; }

inline std::string_view to_string(Subtype s) {
  switch (s) {
    case Subtype::kBenign: return "benign";
    case Subtype::kAtypical: return "atypical";
    case Subtype::kSuspicious: return "suspicious";
    case Subtype::kMalignant: return "malignant";
  }
  return "?";
}

inline std::string_view to_string(CoarseLabel c) {
  return c == CoarseLabel::kHighRisk ? "high_risk" : "low_risk";
}

inline std::string_view to_string(PatchClass c) {
  return c == PatchClass::kMalignant ? "malignant" : "benign";
}

inline Subtype parse_subtype(std::string_view s) {
  for (auto t : kAllSubtypes) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown subtype '" + std::string(s) + "'");
}

inline CoarseLabel parse_coarse_label(std::string_view s) {
  if (s == "high_risk") return CoarseLabel::kHighRisk;
  if (s == "low_risk") return CoarseLabel::kLowRisk;
  throw ConfigError("unknown coarse label '" + std::string(s) + "'");
}

inline PatchClass parse_patch_class(std::string_view s) {
  if (s == "malignant") return PatchClass::kMalignant;
  if (s == "benign") return PatchClass::kBenign;
  throw ConfigError("unknown patch class '" + std::string(s) + "'");
}

/// Integer pixel coordinates (x = column, y = row).
struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

}  // namespace less
