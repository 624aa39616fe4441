#include "debias/noisecrop.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "debias/errors.hpp"
#include "debias/image_io.hpp"
#include "debias/random.hpp"

namespace debias {

namespace fs = std::filesystem;

void NoiseCropConfig::validate() const {
  if (output_size <= 0) throw ConfigError("noisecrop output size must be positive");
  if (!(noise_low < noise_high) || noise_low < 0 || noise_high > 255)
    throw ConfigError(fmt::format("noise bounds [{}, {}] must satisfy 0 <= low < high <= 255", noise_low, noise_high));
}

namespace {

cv::Vec3b bilinear(const cv::Mat& img, double sx, double sy) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.cols - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.rows - 1));
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.cols - 1), y1 = std::min(y0 + 1, img.rows - 1);
  const double fx = sx - x0, fy = sy - y0;
  const auto& a = img.at<cv::Vec3b>(y0, x0);
  const auto& b = img.at<cv::Vec3b>(y0, x1);
  const auto& c = img.at<cv::Vec3b>(y1, x0);
  const auto& d = img.at<cv::Vec3b>(y1, x1);
  cv::Vec3b out;
  for (int ch = 0; ch < 3; ++ch) {
    const double v = (1 - fy) * ((1 - fx) * a[ch] + fx * b[ch]) + fy * ((1 - fx) * c[ch] + fx * d[ch]);
    out[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

}  // namespace

NoiseCropResult noisecrop(const cv::Mat& image, const BitMask& mask, const NoiseCropConfig& config,
                          std::string_view sample_id) {
  config.validate();
  CV_Assert(image.type() == CV_8UC3);
  if (mask.width != image.cols || mask.height != image.rows)
    throw ValidationError(fmt::format("mask {}x{} does not match image {}x{}", mask.width, mask.height, image.cols,
                                      image.rows));

  NoiseCropResult res;
  const BitMask source = mask.empty() ? fallback_segment(image) : mask;
  res.provenance = source.provenance;
  res.low_confidence = source.low_confidence;
  const BitMask hull = convex_hull(source);

  int x0 = hull.width, y0 = hull.height, x1 = -1, y1 = -1;
  for (int y = 0; y < hull.height; ++y)
    for (int x = 0; x < hull.width; ++x)
      if (hull.at(x, y)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  res.box = cv::Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1);

  const int out = config.output_size;
  res.scale = static_cast<double>(out) / std::max(res.box.width, res.box.height);
  const int ow = std::clamp(static_cast<int>(std::lround(res.box.width * res.scale)), 1, out);
  const int oh = std::clamp(static_cast<int>(std::lround(res.box.height * res.scale)), 1, out);
  res.placed = cv::Rect((out - ow) / 2, (out - oh) / 2, ow, oh);

  res.image.create(out, out, CV_8UC3);
  res.lesion = BitMask(out, out);
  res.lesion.provenance = res.provenance;
  Rng rng(derive_seed(config.seed, sample_id));
  const auto span = static_cast<std::uint64_t>(config.noise_high - config.noise_low + 1);
  for (int y = 0; y < out; ++y) {
    auto* row = res.image.ptr<cv::Vec3b>(y);
    for (int x = 0; x < out; ++x)
      for (int c = 0; c < 3; ++c) row[x][c] = static_cast<std::uint8_t>(config.noise_low + rng.below(span));
  }

  // Pixel-center mapping from the placed box back into the hull box.
  const double sx_scale = static_cast<double>(res.box.width) / ow;
  const double sy_scale = static_cast<double>(res.box.height) / oh;
  for (int y = 0; y < oh; ++y) {
    const double sy = y0 + (y + 0.5) * sy_scale - 0.5;
    const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, hull.height - 1);
    auto* row = res.image.ptr<cv::Vec3b>(res.placed.y + y);
    for (int x = 0; x < ow; ++x) {
      const double sx = x0 + (x + 0.5) * sx_scale - 0.5;
      const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, hull.width - 1);
      if (!hull.at(nx, ny)) continue;
      row[res.placed.x + x] = bilinear(image, sx, sy);
      res.lesion.set(res.placed.x + x, res.placed.y + y);
    }
  }
  return res;
}

BitMask fallback_segment(const cv::Mat& image) {
  CV_Assert(image.type() == CV_8UC3);
  const int w = image.cols, h = image.rows;
  cv::Mat gray;
  cv::cvtColor(image, gray, cv::COLOR_RGB2GRAY);
  const cv::Rect center(static_cast<int>(std::lround(0.1 * w)), static_cast<int>(std::lround(0.1 * h)),
                        std::max(1, static_cast<int>(std::lround(0.8 * w))),
                        std::max(1, static_cast<int>(std::lround(0.8 * h))));
  const cv::Mat roi = gray(center);

  BitMask out(w, h);
  out.provenance = MaskProvenance::Fallback;

  double lo = 0, hi = 0;
  cv::minMaxLoc(roi, &lo, &hi);
  std::size_t best_area = 0;
  if (hi - lo >= 8.0) {
    cv::Mat bin;
    cv::threshold(roi, bin, 0, 255, cv::THRESH_BINARY_INV | cv::THRESH_OTSU);
    cv::morphologyEx(bin, bin, cv::MORPH_OPEN, cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(3, 3)));
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(bin, labels, stats, centroids, 8, CV_32S);
    int best = -1;
    for (int l = 1; l < n; ++l) {
      const auto area = static_cast<std::size_t>(stats.at<int>(l, cv::CC_STAT_AREA));
      if (area > best_area) {
        best_area = area;
        best = l;
      }
    }
    // A component smaller than 0.5% of the frame is not a lesion.
    if (best > 0 && best_area * 200 >= static_cast<std::size_t>(w) * h) {
      for (int y = 0; y < labels.rows; ++y)
        for (int x = 0; x < labels.cols; ++x)
          if (labels.at<int>(y, x) == best) out.set(center.x + x, center.y + y);
      return out;
    }
  }

  // Centered ellipse with the frame's aspect and 40% of its area.
  out.low_confidence = true;
  const double k = std::sqrt(0.4 / M_PI);
  const double a = k * w, b = k * h;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (x - cx) / a, dy = (y - cy) / b;
      if (dx * dx + dy * dy <= 1.0) out.set(x, y);
    }
  return out;
}

BatchNoiseCropResult batch_noisecrop(const DatasetManifest& m, const NoiseCropConfig& config, const fs::path& out_dir,
                                     int jobs) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir))
    throw IoError(fmt::format("cannot create output directory '{}'", out_dir.string()));

  struct Outcome {
    bool ok = false;
    SampleRecord record;
    MaskProvenance provenance = MaskProvenance::GroundTruth;
    bool low_confidence = false;
    std::string error;
  };
  std::vector<Outcome> outcomes(m.size());
  const int workers = std::max(1, jobs);

  auto work = [&](int worker) {
    for (std::size_t i = static_cast<std::size_t>(worker); i < m.size(); i += workers) {
      const auto& r = m[i];
      auto& o = outcomes[i];
      try {
        const cv::Mat img = read_rgb(m.resolve(r.image_path));
        BitMask mask(img.cols, img.rows);
        if (r.mask_path) {
          const cv::Mat mm = read_mask(m.resolve(*r.mask_path));
          if (mm.cols != img.cols || mm.rows != img.rows)
            throw ValidationError(fmt::format("mask size {}x{} differs from image {}x{}", mm.cols, mm.rows, img.cols,
                                              img.rows));
          mask = BitMask::from_mat(mm, r.annotation_source == AnnotationSource::GroundTruth
                                           ? MaskProvenance::GroundTruth
                                           : MaskProvenance::Inferred);
        }
        // An absent or empty mask goes through the fallback segmenter.
        const auto res = noisecrop(img, mask, config, r.id);
        o.record = r;
        o.record.image_path = fmt::format("images/{}.png", r.id);
        o.record.mask_path = fmt::format("masks/{}.png", r.id);
        write_rgb(out_dir / o.record.image_path, res.image);
        write_mask(out_dir / *o.record.mask_path, res.lesion.to_mat());
        o.provenance = res.provenance;
        o.low_confidence = res.low_confidence;
        o.ok = true;
      } catch (const std::exception& e) {
        o.error = e.what();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  BatchNoiseCropResult result;
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto& o = outcomes[i];
    if (!o.ok) {
      result.failures.push_back({m[i].id, o.error});
      continue;
    }
    result.fallback_count += o.provenance == MaskProvenance::Fallback;
    o.record.extras.push_back("1");
    o.record.extras.push_back(std::string(to_string(o.provenance)) + (o.low_confidence ? "_low_confidence" : ""));
    records.push_back(std::move(o.record));
  }
  result.manifest = DatasetManifest(m.name() + "-noisecrop", std::move(records), out_dir);
  result.manifest.extra_columns = m.extra_columns;
  result.manifest.extra_columns.push_back("noisecrop");
  result.manifest.extra_columns.push_back("mask_provenance");
  result.manifest.provenance = m.provenance;
  result.manifest.provenance["noisecrop"] = "1";
  save_manifest(result.manifest, out_dir / "manifest.csv");

  nlohmann::json summary{{"source", m.name()},
                         {"transformed", result.manifest.size()},
                         {"fallback", result.fallback_count},
                         {"output_size", config.output_size},
                         {"seed", config.seed},
                         {"failures", nlohmann::json::array()}};
  for (const auto& f : result.failures) summary["failures"].push_back({{"id", f.id}, {"error", f.error}});
  std::ofstream(out_dir / "noisecrop_summary.json") << summary.dump(2) << '\n';
  return result;
}

}  // namespace debias
