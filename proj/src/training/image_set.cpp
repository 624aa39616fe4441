#include "debias/image_set.hpp"

#include <opencv2/imgproc.hpp>

#include "debias/environments.hpp"
#include "debias/image_io.hpp"

namespace debias {

Tensor4 ImageSet::gather(std::span<const std::size_t> indices) const {
  Tensor4 t(static_cast<int>(indices.size()), channels, size, size);
  for (std::size_t k = 0; k < indices.size(); ++k)
    std::copy_n(sample(indices[k]), sample_size(), t.sample(static_cast<int>(k)));
  return t;
}

void image_to_chw(const cv::Mat& rgb, int size, float* dst) {
  cv::Mat resized;
  if (rgb.rows == size && rgb.cols == size)
    resized = rgb;
  else
    cv::resize(rgb, resized, cv::Size(size, size), 0, 0, rgb.rows > size ? cv::INTER_AREA : cv::INTER_LINEAR);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        dst[c * plane + y * size + x] = (row[x][c] / 255.0f - kPixelMean) / kPixelStd;
  }
}

ImageSet load_image_set(const DatasetManifest& m, int size) {
  ImageSet set;
  set.size = size;
  set.channels = 3;
  set.pixels.resize(m.size() * set.sample_size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m[i];
    set.ids.push_back(r.id);
    set.labels.push_back(r.label);
    set.env_codes.push_back(environment_key(r).code());
    image_to_chw(read_rgb(m.resolve(r.image_path)), size, set.sample(i));
  }
  return set;
}

}  // namespace debias
