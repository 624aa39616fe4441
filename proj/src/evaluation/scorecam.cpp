#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "debias/errors.hpp"
#include "debias/evaluation.hpp"

namespace debias {

SaliencyMap combine_saliency(std::span<const std::vector<float>> maps, std::span<const double> scores, int width,
                             int height) {
  if (maps.empty()) throw ValueError("saliency needs at least one channel");
  if (maps.size() != scores.size()) throw ValueError("saliency: one score per channel required");
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (const auto& m : maps)
    if (m.size() != plane) throw ValueError("saliency: channel map has the wrong size");

  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) z += w[k] = std::exp(scores[k] - top);
  for (auto& v : w) v /= z;

  std::vector<double> acc(plane, 0.0);
  for (std::size_t k = 0; k < maps.size(); ++k)
    for (std::size_t i = 0; i < plane; ++i) acc[i] += w[k] * maps[k][i];

  SaliencyMap out;
  out.width = width;
  out.height = height;
  out.values.resize(plane);
  double peak = 0.0;
  for (auto& v : acc) peak = std::max(peak, v = std::max(v, 0.0));
  out.all_zero = !(peak > 0.0);
  for (std::size_t i = 0; i < plane; ++i) out.values[i] = out.all_zero ? 0.0f : static_cast<float>(acc[i] / peak);
  return out;
}

SaliencyMap scorecam(Classifier& model, const Tensor4& image, std::string_view layer, int target_class) {
  if (image.n != 1) throw ValueError("scorecam expects a single image");
  if (target_class != 0 && target_class != 1) throw ValueError(fmt::format("invalid target class {}", target_class));
  if (image.c != model.input_channels() || image.h != model.input_size() || image.w != model.input_size())
    throw ValueError("scorecam: image does not match the model input");

  const Tensor4 act = model.layer_activation(image, layer);
  if (act.c < 1 || act.h < 1 || act.w < 1) throw ValueError(fmt::format("layer '{}' has no spatial channels", layer));
  const int size = image.h;
  const std::size_t plane = static_cast<std::size_t>(size) * size;

  bool any_activation = false;
  std::vector<std::vector<float>> upsampled(act.c);
  Tensor4 masked(act.c, image.c, size, size);
  for (int k = 0; k < act.c; ++k) {
    cv::Mat a(act.h, act.w, CV_32F, const_cast<float*>(act.data.data() + static_cast<std::size_t>(k) * act.h * act.w));
    cv::Mat up;
    cv::resize(a, up, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    upsampled[k].assign(up.ptr<float>(), up.ptr<float>() + plane);
    double lo = 0, hi = 0;
    cv::minMaxLoc(up, &lo, &hi);
    any_activation |= hi > 0.0 || lo < 0.0;
    const double range = hi - lo;
    for (int c = 0; c < image.c; ++c) {
      const float* src = image.data.data() + c * plane;
      float* dst = masked.data.data() + (static_cast<std::size_t>(k) * image.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double s = range > 0 ? (upsampled[k][i] - lo) / range : 0.0;
        // Mask in pixel space, then renormalise.
        const double raw = src[i] * kPixelStd + kPixelMean;
        dst[i] = static_cast<float>((raw * s - kPixelMean) / kPixelStd);
      }
    }
  }

  SaliencyMap out;
  if (!any_activation) {
    out.width = out.height = size;
    out.values.assign(plane, 0.0f);
    out.all_zero = true;
  } else {
    std::vector<double> scores;
    for (double p : model.predict_proba(masked)) scores.push_back(target_class == 1 ? p : 1.0 - p);
    out = combine_saliency(upsampled, scores, size, size);
  }
  out.target_class = target_class;
  out.layer = std::string(layer);
  return out;
}

}  // namespace debias
