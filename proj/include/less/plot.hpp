#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace less::plot {

struct Series {
  std::string name;
  std::vector<double> mean;
  std::vector<double> std;  // optional error bars; empty for none
};

/// Line chart over categorical x positions, written as PNG. NaN values
/// leave a gap.
void line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::vector<std::string>& x_ticks, const std::string& y_label,
                const std::vector<Series>& series);

}  // namespace less::plot
