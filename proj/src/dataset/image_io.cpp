#include "debias/image_io.hpp"

#include <fmt/format.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "debias/errors.hpp"

namespace debias {

namespace fs = std::filesystem;

namespace {

const std::vector<int>& png_params() {
  static const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  return params;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError(fmt::format("cannot read image '{}'", path.string()));
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  CV_Assert(rgb.type() == CV_8UC3);
  ensure_parent(path);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr, png_params()))
    throw IoError(fmt::format("cannot write image '{}'", path.string()));
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError(fmt::format("cannot read mask '{}'", path.string()));
  return m;
}

void write_mask(const fs::path& path, const cv::Mat& mask) {
  CV_Assert(mask.type() == CV_8UC1);
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mask, png_params()))
    throw IoError(fmt::format("cannot write mask '{}'", path.string()));
}

}  // namespace debias
