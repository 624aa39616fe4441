#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace debias {

// Images are held as CV_8UC3 in RGB channel order; masks as CV_8UC1.
// Conversion to OpenCV's BGR happens only at the file boundary.

cv::Mat read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const cv::Mat& rgb);
cv::Mat read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const cv::Mat& mask);

}  // namespace debias
