#include "less/plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace less::plot {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},
                               {40, 39, 214},  {189, 103, 148}, {75, 86, 140}};  // BGR

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, {30, 30, 30}, 1, cv::LINE_AA);
}

}  // namespace

void line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::vector<std::string>& x_ticks, const std::string& y_label,
                const std::vector<Series>& series) {
  if (x_ticks.empty()) throw std::invalid_argument("plot: no x positions");
  constexpr int W = 720, H = 480, L = 70, R = 170, T = 40, B = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      if (std::isnan(s.mean[i])) continue;
      const double e = i < s.std.size() && !std::isnan(s.std[i]) ? s.std[i] : 0.0;
      lo = std::min(lo, s.mean[i] - e);
      hi = std::max(hi, s.mean[i] + e);
    }
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-9) lo -= 1, hi += 1;
  const double pad = 0.05 * (hi - lo);
  lo -= pad, hi += pad;

  const int pw = W - L - R, ph = H - T - B;
  auto px = [&](std::size_t i) {
    return L + (x_ticks.size() == 1 ? pw / 2 : static_cast<int>(i * pw / (x_ticks.size() - 1)));
  };
  auto py = [&](double v) { return T + static_cast<int>(std::lround((hi - v) / (hi - lo) * ph)); };

  cv::rectangle(img, {L, T}, {L + pw, T + ph}, {160, 160, 160}, 1);
  for (int g = 0; g <= 4; ++g) {
    const double v = lo + (hi - lo) * g / 4.0;
    cv::line(img, {L, py(v)}, {L + pw, py(v)}, {230, 230, 230}, 1);
    text(img, fmt(v), {8, py(v) + 4}, 0.4);
  }
  for (std::size_t i = 0; i < x_ticks.size(); ++i) text(img, x_ticks[i], {px(i) - 10, T + ph + 20}, 0.4);
  text(img, title, {L, 25}, 0.55);
  text(img, x_label, {L + pw / 2 - 40, H - 15});
  text(img, y_label, {8, T - 10}, 0.4);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar c = kPalette[k % std::size(kPalette)];
    for (std::size_t i = 0; i < s.mean.size() && i < x_ticks.size(); ++i) {
      if (std::isnan(s.mean[i])) continue;
      const cv::Point p{px(i), py(s.mean[i])};
      if (i < s.std.size() && !std::isnan(s.std[i]) && s.std[i] > 0) {
        cv::line(img, {p.x, py(s.mean[i] - s.std[i])}, {p.x, py(s.mean[i] + s.std[i])}, c, 1);
      }
      cv::circle(img, p, 3, c, cv::FILLED, cv::LINE_AA);
      if (i > 0 && !std::isnan(s.mean[i - 1])) cv::line(img, {px(i - 1), py(s.mean[i - 1])}, p, c, 2, cv::LINE_AA);
    }
    const int ly = T + 15 + 20 * static_cast<int>(k);
    cv::line(img, {L + pw + 15, ly - 4}, {L + pw + 35, ly - 4}, c, 2);
    text(img, s.name, {L + pw + 40, ly});
  }
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write plot " + path.string());
}

}  // namespace less::plot
