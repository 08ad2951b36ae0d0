#include "less/baselines.hpp"

namespace less::baselines {

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::kSmall: return "small";
    case Scale::kLarge: return "large";
    case Scale::kConcat: return "concat";
  }
  return "?";
}

Scale parse_scale(std::string_view s) {
  if (s == "small") return Scale::kSmall;
  if (s == "large") return Scale::kLarge;
  if (s == "concat") return Scale::kConcat;
  throw ConfigError("unknown scale '" + std::string(s) + "' (small, large, concat)");
}

int count_malignant(const Matrix<float>& log_probs) {
  if (log_probs.cols() != 2) throw ShapeError("counting expects n x 2 log-probabilities");
  int n = 0;
  for (Index i = 0; i < log_probs.rows(); ++i) n += log_probs(i, 1) > log_probs(i, 0);
  return n;
}

CoarseLabel counting_classifier(const Matrix<float>& log_probs, int threshold) {
  return count_malignant(log_probs) >= threshold ? CoarseLabel::kHighRisk : CoarseLabel::kLowRisk;
}

}  // namespace less::baselines
