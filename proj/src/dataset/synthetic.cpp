#include "debias/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "debias/errors.hpp"
#include "debias/image_io.hpp"
#include "debias/random.hpp"

namespace debias {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticConfig::validate() const {
  if (n_samples <= 0) throw ConfigError("n_samples must be positive");
  if (image_size < 16) throw ConfigError("image_size must be at least 16 pixels");
  if (lesion_strength < 0.0) throw ConfigError("lesion_strength must be non-negative");
  (void)conditionals();
}

std::array<ArtifactConditionals, kNumArtifacts> SyntheticConfig::conditionals() const {
  std::array<ArtifactConditionals, kNumArtifacts> out{};
  for (std::size_t a = 0; a < kNumArtifacts; ++a) {
    try {
      out[a] = solve_contingency(artifacts[a].correlation, artifacts[a].marginal, class_prevalence);
    } catch (const FeasibilityError& e) {
      throw FeasibilityError(fmt::format("artifact '{}': {}", kArtifactNames[a], e.what()), e.cell());
    }
  }
  return out;
}

void to_json(json& j, const SyntheticConfig& c) {
  json arts = json::object();
  for (std::size_t a = 0; a < kNumArtifacts; ++a)
    arts[std::string(kArtifactNames[a])] = {{"marginal", c.artifacts[a].marginal},
                                            {"correlation", c.artifacts[a].correlation}};
  j = json{{"n_samples", c.n_samples},
           {"image_size", c.image_size},
           {"class_prevalence", c.class_prevalence},
           {"artifacts", arts},
           {"lesion_strength", c.lesion_strength},
           {"seed", c.seed},
           {"id_prefix", c.id_prefix}};
}

void from_json(const json& j, SyntheticConfig& c) {
  c.n_samples = j.value("n_samples", c.n_samples);
  c.image_size = j.value("image_size", c.image_size);
  c.class_prevalence = j.value("class_prevalence", c.class_prevalence);
  c.lesion_strength = j.value("lesion_strength", c.lesion_strength);
  c.seed = j.value("seed", c.seed);
  c.id_prefix = j.value("id_prefix", c.id_prefix);
  if (j.contains("artifacts")) {
    for (const auto& [name, v] : j.at("artifacts").items()) {
      const int a = artifact_index(name);
      if (a < 0) throw ConfigError(fmt::format("unknown artifact '{}' in synthetic config", name));
      c.artifacts[a].marginal = v.value("marginal", c.artifacts[a].marginal);
      c.artifacts[a].correlation = v.value("correlation", c.artifacts[a].correlation);
    }
  }
}

namespace {

using Color = cv::Vec3f;

// img = img * (1 - alpha) + color * alpha, alpha = layer / 255 * opacity.
void blend(cv::Mat& img, const cv::Mat& layer, Color color, float opacity) {
  for (int y = 0; y < img.rows; ++y) {
    auto* px = img.ptr<Color>(y);
    const auto* al = layer.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.cols; ++x) {
      if (!al[x]) continue;
      const float a = al[x] / 255.0f * opacity;
      px[x] = px[x] * (1.0f - a) + color * a;
    }
  }
}

cv::Mat blank_layer(int size) { return cv::Mat::zeros(size, size, CV_8UC1); }

cv::Point to_fixed(double x, double y) {
  // 4 fractional bits for sub-pixel anti-aliased drawing.
  return {static_cast<int>(std::lround(x * 16.0)), static_cast<int>(std::lround(y * 16.0))};
}
constexpr int kShift = 4;

struct Lesion {
  double cx, cy, radius;
};

Lesion draw_lesion(cv::Mat& img, cv::Mat& mask, int label, double strength, Rng& rng) {
  const int s = img.rows;
  const double cx = s / 2.0 + rng.uniform(-0.06, 0.06) * s;
  const double cy = s / 2.0 + rng.uniform(-0.06, 0.06) * s;
  const double radius = rng.uniform(0.20, 0.30) * s;
  const double aspect = rng.uniform(0.78, 1.0);
  const double tilt = rng.uniform(0.0, std::numbers::pi);

  // Atypia overlaps between classes so the lesion alone is an imperfect cue.
  const double atypia = label ? rng.uniform(0.35, 1.0) : rng.uniform(0.0, 0.45);
  const double irregular = strength * atypia;

  struct Harmonic {
    int k;
    double amp, phase;
  };
  std::vector<Harmonic> harmonics;
  for (int k = 2; k <= 3; ++k)
    harmonics.push_back({k, rng.uniform(0.0, 0.04), rng.uniform(0.0, 2 * std::numbers::pi)});
  const int n_high = 3 + static_cast<int>(rng.below(2));
  for (int i = 0; i < n_high; ++i)
    harmonics.push_back({rng.range(5, 11), irregular * rng.uniform(0.05, 0.11),
                         rng.uniform(0.0, 2 * std::numbers::pi)});

  constexpr int kVertices = 240;
  std::vector<cv::Point> poly_fixed;
  std::vector<cv::Point> poly_px;
  for (int v = 0; v < kVertices; ++v) {
    const double t = 2 * std::numbers::pi * v / kVertices;
    double r = 1.0;
    for (const auto& h : harmonics) r += h.amp * std::cos(h.k * t + h.phase);
    const double ex = radius * r * std::cos(t);
    const double ey = radius * aspect * r * std::sin(t);
    const double x = cx + ex * std::cos(tilt) - ey * std::sin(tilt);
    const double y = cy + ex * std::sin(tilt) + ey * std::cos(tilt);
    poly_fixed.push_back(to_fixed(x, y));
    poly_px.emplace_back(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
  }

  cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{poly_px}, cv::Scalar(255), cv::LINE_8);

  cv::Mat layer = blank_layer(s);
  cv::fillPoly(layer, std::vector<std::vector<cv::Point>>{poly_fixed}, cv::Scalar(255), cv::LINE_AA,
               kShift);
  const Color base(static_cast<float>(rng.uniform(120, 160)), static_cast<float>(rng.uniform(80, 105)),
                   static_cast<float>(rng.uniform(55, 75)));
  blend(img, layer, base, 1.0f);

  // Interior mottling: dark and blue-grey blotches whose number and contrast
  // grow with atypia.
  const int n_blotch = static_cast<int>(std::lround(1 + 9 * irregular));
  for (int b = 0; b < n_blotch; ++b) {
    const double ang = rng.uniform(0.0, 2 * std::numbers::pi);
    const double dist = radius * 0.6 * std::sqrt(rng.uniform());
    const double bx = cx + dist * std::cos(ang);
    const double by = cy + dist * std::sin(ang) * aspect;
    const double br = radius * rng.uniform(0.10, 0.24);
    cv::Mat blotch = blank_layer(s);
    cv::ellipse(blotch, to_fixed(bx, by), cv::Size(static_cast<int>(br * 16), static_cast<int>(br * 0.7 * 16)),
                rng.uniform(0, 180), 0, 360, cv::Scalar(255), cv::FILLED, cv::LINE_AA, kShift);
    cv::bitwise_and(blotch, layer, blotch);
    const Color dark = rng.bernoulli(0.5) ? Color(45, 28, 25) : Color(95, 100, 130);
    blend(img, blotch, dark, static_cast<float>(std::min(1.0, 0.35 + 0.55 * irregular)));
  }
  return {cx, cy, radius};
}

void draw_background(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  const Color skin(static_cast<float>(rng.uniform(205, 235)), static_cast<float>(rng.uniform(165, 195)),
                   static_cast<float>(rng.uniform(145, 175)));
  const double gx = rng.uniform(-12, 12), gy = rng.uniform(-12, 12);
  for (int y = 0; y < s; ++y) {
    auto* px = img.ptr<Color>(y);
    for (int x = 0; x < s; ++x) {
      const float shade = static_cast<float>(gx * (x / double(s) - 0.5) + gy * (y / double(s) - 0.5) +
                                             rng.uniform(-3, 3));
      px[x] = skin + Color(shade, shade, shade);
    }
  }
}

void draw_dark_corner(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  const double r0 = rng.uniform(0.50, 0.62) * s;
  const double ramp = 0.08 * s;
  const double c = (s - 1) / 2.0;
  for (int y = 0; y < s; ++y) {
    auto* px = img.ptr<Color>(y);
    for (int x = 0; x < s; ++x) {
      const double d = std::hypot(x - c, y - c);
      if (d <= r0) continue;
      const float f = static_cast<float>(std::min(1.0, (d - r0) / ramp));
      px[x] = px[x] * (1.0f - 0.92f * f);
    }
  }
}

void draw_hair(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  const int n = rng.range(2, 5);
  for (int h = 0; h < n; ++h) {
    cv::Mat layer = blank_layer(s);
    cv::Point2d p0(rng.uniform(0, s), rng.uniform(0, s));
    cv::Point2d p2(rng.uniform(0, s), rng.uniform(0, s));
    cv::Point2d p1(rng.uniform(0, s), rng.uniform(0, s));
    std::vector<cv::Point> pts;
    for (int i = 0; i <= 24; ++i) {
      const double t = i / 24.0;
      const auto p = (1 - t) * (1 - t) * p0 + 2 * (1 - t) * t * p1 + t * t * p2;
      pts.push_back(to_fixed(p.x, p.y));
    }
    cv::polylines(layer, std::vector<std::vector<cv::Point>>{pts}, false, cv::Scalar(255),
                  std::max(1, s / 64), cv::LINE_AA, kShift);
    blend(img, layer, Color(35, 25, 20), 0.9f);
  }
}

void draw_gel_border(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  cv::Mat layer = blank_layer(s);
  const int width = std::max(2, static_cast<int>(s * rng.uniform(0.07, 0.11)));
  const int edges = rng.range(1, 2);
  int first = static_cast<int>(rng.below(4));
  for (int e = 0; e < edges; ++e) {
    switch ((first + e) % 4) {
      case 0: cv::rectangle(layer, cv::Rect(0, 0, s, width), cv::Scalar(255), cv::FILLED); break;
      case 1: cv::rectangle(layer, cv::Rect(s - width, 0, width, s), cv::Scalar(255), cv::FILLED); break;
      case 2: cv::rectangle(layer, cv::Rect(0, s - width, s, width), cv::Scalar(255), cv::FILLED); break;
      default: cv::rectangle(layer, cv::Rect(0, 0, width, s), cv::Scalar(255), cv::FILLED); break;
    }
  }
  cv::GaussianBlur(layer, layer, cv::Size(3, 3), 0);
  blend(img, layer, Color(235, 238, 240), 0.75f);
}

// Point in the background ring: at least `clearance` outside the lesion circle.
cv::Point2d background_point(const Lesion& les, double clearance, int s, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    cv::Point2d p(rng.uniform(0.05, 0.95) * s, rng.uniform(0.05, 0.95) * s);
    if (std::hypot(p.x - les.cx, p.y - les.cy) > les.radius * 1.3 + clearance) return p;
  }
  return {0.1 * s, 0.1 * s};
}

void draw_gel_bubble(cv::Mat& img, const Lesion& les, Rng& rng) {
  const int s = img.rows;
  const int n = rng.range(2, 4);
  for (int b = 0; b < n; ++b) {
    const double r = rng.uniform(0.03, 0.07) * s;
    const auto p = background_point(les, r, s, rng);
    cv::Mat fill = blank_layer(s), rim = blank_layer(s);
    cv::circle(fill, to_fixed(p.x, p.y), static_cast<int>(r * 16), cv::Scalar(255), cv::FILLED, cv::LINE_AA,
               kShift);
    cv::circle(rim, to_fixed(p.x, p.y), static_cast<int>(r * 16), cv::Scalar(255), std::max(1, s / 64),
               cv::LINE_AA, kShift);
    blend(img, fill, Color(250, 250, 252), 0.35f);
    blend(img, rim, Color(255, 255, 255), 0.9f);
  }
}

void draw_ruler(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  cv::Mat layer = blank_layer(s);
  const int edge = static_cast<int>(rng.below(4));
  const double offset = rng.uniform(0.05, 0.10) * s;
  const double spacing = rng.uniform(0.045, 0.06) * s;
  const int thick = std::max(1, s / 64);
  auto line = [&](cv::Point2d a, cv::Point2d b) {
    cv::line(layer, to_fixed(a.x, a.y), to_fixed(b.x, b.y), cv::Scalar(255), thick, cv::LINE_AA, kShift);
  };
  // Work in edge-local coordinates: u along the edge, v inward from it.
  auto map = [&](double u, double v) -> cv::Point2d {
    switch (edge) {
      case 0: return {u, v};
      case 1: return {s - 1 - v, u};
      case 2: return {u, s - 1 - v};
      default: return {v, u};
    }
  };
  const double start = rng.uniform(0.0, 0.2) * s, stop = rng.uniform(0.8, 1.0) * s;
  line(map(start, offset), map(stop, offset));
  int i = 0;
  for (double u = start; u <= stop; u += spacing, ++i) {
    const double len = (i % 5 == 0 ? 0.07 : 0.035) * s;
    line(map(u, offset), map(u, offset - len));
  }
  blend(img, layer, Color(20, 20, 25), 0.95f);
}

void draw_ink(cv::Mat& img, const Lesion& les, Rng& rng) {
  const int s = img.rows;
  const double ang = rng.uniform(0.0, 2 * std::numbers::pi);
  const double dist = les.radius * 1.35 + rng.uniform(0.04, 0.12) * s;
  const double x = std::clamp(les.cx + dist * std::cos(ang), 0.05 * s, 0.95 * s);
  const double y = std::clamp(les.cy + dist * std::sin(ang), 0.05 * s, 0.95 * s);
  const double r = rng.uniform(0.05, 0.09) * s;
  cv::Mat layer = blank_layer(s);
  cv::ellipse(layer, to_fixed(x, y), cv::Size(static_cast<int>(r * 16), static_cast<int>(r * 0.6 * 16)),
              rng.uniform(0, 180), 0, 360, cv::Scalar(255), cv::FILLED, cv::LINE_AA, kShift);
  blend(img, layer, Color(110, 55, 165), 0.85f);
}

void draw_patch(cv::Mat& img, Rng& rng) {
  const int s = img.rows;
  const double r = rng.uniform(0.09, 0.13) * s;
  const int corner = static_cast<int>(rng.below(4));
  const double x = (corner & 1) ? s - 1.4 * r : 1.4 * r;
  const double y = (corner & 2) ? s - 1.4 * r : 1.4 * r;
  cv::Mat layer = blank_layer(s);
  cv::circle(layer, to_fixed(x, y), static_cast<int>(r * 16), cv::Scalar(255), cv::FILLED, cv::LINE_AA, kShift);
  const Color colors[] = {Color(250, 245, 120), Color(120, 220, 240), Color(250, 250, 250)};
  blend(img, layer, colors[rng.below(3)], 1.0f);
}

}  // namespace

SyntheticSample render_with(const SyntheticConfig& config, const std::string& id, int label,
                            ArtifactVector artifacts) {
  Rng rng(derive_seed(derive_seed(config.seed, id), "render"));
  const int s = config.image_size;
  cv::Mat canvas(s, s, CV_32FC3);
  cv::Mat mask = cv::Mat::zeros(s, s, CV_8UC1);

  draw_background(canvas, rng);
  const Lesion les = draw_lesion(canvas, mask, label, config.lesion_strength, rng);

  // Each artifact draws from its own stream so toggling one leaves the
  // others' geometry unchanged.
  auto stream = [&](Artifact a) {
    return Rng(derive_seed(derive_seed(config.seed, id), 100 + static_cast<std::uint64_t>(a)));
  };
  if (artifacts.has(Artifact::GelBorder)) { auto r = stream(Artifact::GelBorder); draw_gel_border(canvas, r); }
  if (artifacts.has(Artifact::Patches)) { auto r = stream(Artifact::Patches); draw_patch(canvas, r); }
  if (artifacts.has(Artifact::Ink)) { auto r = stream(Artifact::Ink); draw_ink(canvas, les, r); }
  if (artifacts.has(Artifact::GelBubble)) { auto r = stream(Artifact::GelBubble); draw_gel_bubble(canvas, les, r); }
  if (artifacts.has(Artifact::Hair)) { auto r = stream(Artifact::Hair); draw_hair(canvas, r); }
  if (artifacts.has(Artifact::Ruler)) { auto r = stream(Artifact::Ruler); draw_ruler(canvas, r); }
  if (artifacts.has(Artifact::DarkCorner)) { auto r = stream(Artifact::DarkCorner); draw_dark_corner(canvas, r); }

  SyntheticSample out;
  out.label = label;
  out.artifacts = artifacts;
  canvas.convertTo(out.image, CV_8UC3);  // saturating round
  out.mask = mask;
  return out;
}

SyntheticSample render_sample(const SyntheticConfig& config, const std::string& id) {
  const auto cond = config.conditionals();
  Rng rng(derive_seed(derive_seed(config.seed, id), "labels"));
  const int label = rng.bernoulli(config.class_prevalence) ? 1 : 0;
  ArtifactVector arts;
  for (std::size_t a = 0; a < kNumArtifacts; ++a)
    arts.set(a, rng.bernoulli(label ? cond[a].given_positive : cond[a].given_negative));
  return render_with(config, id, label, arts);
}

DatasetManifest generate_synthetic(const SyntheticConfig& config, const fs::path& out_dir, int jobs) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir))
    throw IoError(fmt::format("cannot create output directory '{}'", out_dir.string()));

  const int n = config.n_samples;
  std::vector<SampleRecord> records(n);
  std::vector<std::exception_ptr> errors(std::max(1, jobs));
  auto work = [&](int worker) {
    try {
      for (int i = worker; i < n; i += std::max(1, jobs)) {
        SampleRecord r;
        r.id = fmt::format("{}_{:06d}", config.id_prefix, i);
        auto sample = render_sample(config, r.id);
        r.image_path = fmt::format("images/{}.png", r.id);
        r.mask_path = fmt::format("masks/{}.png", r.id);
        r.label = sample.label;
        r.artifacts = sample.artifacts;
        r.annotation_source = AnnotationSource::GroundTruth;
        write_rgb(out_dir / r.image_path, sample.image);
        write_mask(out_dir / *r.mask_path, sample.mask);
        records[i] = std::move(r);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (jobs <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  DatasetManifest m(fmt::format("{}", config.id_prefix), std::move(records), out_dir);
  m.provenance["generator"] = "synthetic";
  m.provenance["seed"] = std::to_string(config.seed);
  save_manifest(m, out_dir / "manifest.csv");
  std::ofstream cfg(out_dir / "synthetic_config.json");
  if (!cfg) throw IoError(fmt::format("cannot write '{}'", (out_dir / "synthetic_config.json").string()));
  cfg << json(config).dump(2) << '\n';
  return m;
}

}  // namespace debias
