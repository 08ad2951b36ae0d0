#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace less {

/// Images are 8-bit 3-channel cv::Mat in RGB channel order throughout the
/// library; conversion to OpenCV's BGR happens only at file boundaries.
cv::Mat read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

}  // namespace less
