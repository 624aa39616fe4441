#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/imgproc.hpp>

#include "debias/errors.hpp"
#include "debias/evaluation.hpp"
#include "debias/image_io.hpp"

namespace fs = std::filesystem;

namespace debias {

namespace {

constexpr std::string_view kNoiseCrop = "+NoiseCrop";

void write_file(const fs::path& p, const std::string& text, std::vector<fs::path>& written) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError(fmt::format("cannot write '{}'", p.string()));
  written.push_back(p);
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* series_color(std::string_view base) {
  if (base == "ERM") return "#4c72b0";
  if (base == "GroupDRO") return "#dd8452";
  if (base == "RSC") return "#55a868";
  return "#8172b3";
}

/// Line plot of mean trap-test AUC against bias factor, one line per method,
/// shaded +-1 standard error. Segments touching a missing cell are left out.
std::string sweep_svg(const SweepResult& r, const std::vector<std::string>& methods, std::string_view title) {
  constexpr double W = 640, H = 420, L = 60, R = 150, T = 40, B = 50;
  double lo = 1.0, hi = 0.0;
  for (const auto& m : methods)
    for (double f : r.factors)
      if (const auto* a = r.aggregate(f, m); a && a->auc.n > 0) {
        lo = std::min(lo, a->auc.mean - a->auc.stderr_);
        hi = std::max(hi, a->auc.mean + a->auc.stderr_);
      }
  if (lo > hi) lo = 0.0, hi = 1.0;
  lo = std::max(0.0, std::floor(lo * 20 - 1e-9) / 20);
  hi = std::min(1.0, std::ceil(hi * 20 + 1e-9) / 20);
  if (hi - lo < 0.1) hi = std::min(1.0, lo + 0.1), lo = hi - 0.1;
  double fmin = *std::min_element(r.factors.begin(), r.factors.end());
  double fmax = *std::max_element(r.factors.begin(), r.factors.end());
  if (fmax - fmin < 1e-9) fmin -= 0.5, fmax += 0.5;
  auto px = [&](double f) { return L + (f - fmin) / (fmax - fmin) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - lo) / (hi - lo) * (H - T - B); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
      W, H, (L + W - R) / 2, html_escape(title));
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    s += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n"
        "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n",
        L, py(v), W - R, py(v), L - 6, py(v) + 4, v);
  }
  for (double f : r.factors)
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.2f}</text>\n", px(f), H - B + 18, f);
  s += fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<text x=\"{4}\" y=\"{5}\" text-anchor=\"middle\">bias factor</text>\n"
      "<text x=\"16\" y=\"{6}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {6})\">trap-test AUC</text>\n",
      L, H - B, W - R, T, (L + W - R) / 2, H - 12, (T + H - B) / 2);

  std::vector<double> factors = r.factors;
  std::sort(factors.begin(), factors.end());
  int legend = 0;
  for (const auto& m : methods) {
    std::string base = m;
    if (base.ends_with(kNoiseCrop)) base.resize(base.size() - kNoiseCrop.size());
    const char* color = series_color(base);
    for (std::size_t i = 0; i + 1 < factors.size(); ++i) {
      const auto* a = r.aggregate(factors[i], m);
      const auto* b = r.aggregate(factors[i + 1], m);
      if (!a || !b || a->auc.n == 0 || b->auc.n == 0) continue;
      s += fmt::format(
          "<polygon points=\"{:.1f},{:.1f} {:.1f},{:.1f} {:.1f},{:.1f} {:.1f},{:.1f}\" fill=\"{}\" "
          "fill-opacity=\"0.18\" stroke=\"none\"/>\n",
          px(a->factor), py(a->auc.mean + a->auc.stderr_), px(b->factor), py(b->auc.mean + b->auc.stderr_),
          px(b->factor), py(b->auc.mean - b->auc.stderr_), px(a->factor), py(a->auc.mean - a->auc.stderr_), color);
      s += fmt::format(
          "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
          px(a->factor), py(a->auc.mean), px(b->factor), py(b->auc.mean), color);
    }
    for (double f : factors)
      if (const auto* a = r.aggregate(f, m); a && a->auc.n > 0)
        s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", px(f), py(a->auc.mean), color);
    const double ly = T + 10 + 20 * legend++;
    s += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n"
        "<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n",
        W - R + 12, ly, W - R + 32, ly, color, W - R + 38, ly + 4, html_escape(m));
  }
  s += "</svg>\n";
  return s;
}

std::string correlation_color(double v) {
  const double t = std::clamp(std::abs(v), 0.0, 1.0);
  const int fade = static_cast<int>(std::lround(255 * (1.0 - 0.7 * t)));
  return v >= 0 ? fmt::format("rgb({0},255,{0})", fade) : fmt::format("rgb(255,{0},{0})", fade);
}

}  // namespace

cv::Mat saliency_overlay(const cv::Mat& rgb, const SaliencyMap& map, bool correct) {
  if (rgb.empty() || rgb.type() != CV_8UC3) throw ValueError("saliency overlay needs an RGB image");
  cv::Mat base;
  const int side = std::max({rgb.cols, rgb.rows, 224});
  cv::resize(rgb, base, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);

  cv::Mat heat8;
  cv::Mat m(map.height, map.width, CV_32F, const_cast<float*>(map.values.data()));
  cv::Mat up;
  cv::resize(m, up, base.size(), 0, 0, cv::INTER_LINEAR);
  up.convertTo(heat8, CV_8U, 255.0);
  cv::Mat heat;
  cv::applyColorMap(heat8, heat, cv::COLORMAP_JET);
  cv::cvtColor(heat, heat, cv::COLOR_BGR2RGB);
  cv::Mat out;
  cv::addWeighted(base, 0.55, heat, 0.45, 0.0, out);

  const int t = std::max(3, side / 40);
  const int edge = side - 1 - t / 2;
  const int lo = t / 2;
  if (correct) {
    cv::rectangle(out, cv::Point(lo, lo), cv::Point(edge, edge), cv::Scalar(0, 0, 255), t);
  } else {
    const int dash = std::max(6, side / 16);
    const cv::Scalar red(255, 0, 0);
    for (int p = 0; p < side; p += 2 * dash) {
      const int q = std::min(side - 1, p + dash);
      cv::line(out, {p, lo}, {q, lo}, red, t);
      cv::line(out, {p, edge}, {q, edge}, red, t);
      cv::line(out, {lo, p}, {lo, q}, red, t);
      cv::line(out, {edge, p}, {edge, q}, red, t);
    }
  }
  return out;
}

std::vector<fs::path> render_report(const ReportInputs& in, const fs::path& out_dir) {
  if (!in.sweep && in.correlations.empty() && in.auc_table.empty() && in.saliency.empty())
    throw ValidationError("render_report: nothing to render");
  std::vector<fs::path> written;
  std::string index = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>report</title></head><body>\n";

  if (in.sweep) {
    const auto& r = *in.sweep;
    std::vector<std::string> original, cropped;
    for (const auto& m : r.methods) (m.ends_with(kNoiseCrop) ? cropped : original).push_back(m);
    index += "<h2>Trap sweep</h2>\n";
    if (!original.empty()) {
      write_file(out_dir / "sweep_original.svg", sweep_svg(r, original, "Original test images"), written);
      index += "<img src=\"sweep_original.svg\"/>\n";
    }
    if (!cropped.empty()) {
      write_file(out_dir / "sweep_noisecrop.svg", sweep_svg(r, cropped, "NoiseCrop test images"), written);
      index += "<img src=\"sweep_noisecrop.svg\"/>\n";
    }
    std::string csv = "factor,method,n_seeds,mean_auc,stderr\n";
    index += "<table border=\"1\"><tr><th>factor</th><th>method</th><th>seeds</th><th>AUC</th></tr>\n";
    for (const auto& a : r.aggregates) {
      const std::string mean = a.auc.n > 0 ? fmt::format("{:.4f}", a.auc.mean) : "NA";
      csv += fmt::format("{:.2f},{},{},{},{:.4f}\n", a.factor, a.method, a.auc.n, mean, a.auc.stderr_);
      index += fmt::format("<tr><td>{:.2f}</td><td>{}</td><td>{}</td><td>{} &plusmn; {:.4f}</td></tr>\n", a.factor,
                           html_escape(a.method), a.auc.n, mean, a.auc.stderr_);
    }
    index += "</table>\n";
    write_file(out_dir / "sweep_table.csv", csv, written);
  }

  if (!in.correlations.empty()) {
    std::string csv;
    std::string html = "<table border=\"1\" cellpadding=\"4\"><tr><th>factor</th><th>set</th><th>n</th>";
    for (auto name : kArtifactNames) html += fmt::format("<th>{}</th>", name);
    html += "</tr>\n";
    for (std::size_t i = 0; i < in.correlations.size(); ++i) {
      const auto& [factor, report] = in.correlations[i];
      std::string part = report_csv(report, factor);
      if (i > 0) part.erase(0, part.find('\n') + 1);
      csv += part;
      for (const auto& row : report.rows) {
        html += fmt::format("<tr><td>{}</td><td>{}</td><td>{}</td>", factor ? fmt::format("{:.2f}", *factor) : "",
                            html_escape(row.split), row.n);
        for (const auto& v : row.values)
          html += v ? fmt::format("<td style=\"background:{}\">{:.3f}</td>", correlation_color(*v), *v)
                    : "<td>NA</td>";
        html += "</tr>\n";
      }
    }
    html += "</table>\n";
    write_file(out_dir / "correlations.csv", csv, written);
    write_file(out_dir / "correlations.html", "<!doctype html>\n<html><body>\n" + html + "</body></html>\n", written);
    index += "<h2>Artifact correlations</h2>\n" + html;
  }

  if (!in.auc_table.empty()) {
    std::string csv = "method,mean_auc,stderr,n\n";
    index += "<h2>AUC</h2>\n<table border=\"1\"><tr><th>method</th><th>AUC</th><th>n</th></tr>\n";
    for (const auto& [name, ms] : in.auc_table) {
      csv += fmt::format("{},{:.4f},{:.4f},{}\n", name, ms.mean, ms.stderr_, ms.n);
      index += fmt::format("<tr><td>{}</td><td>{:.4f} &plusmn; {:.4f}</td><td>{}</td></tr>\n", html_escape(name),
                           ms.mean, ms.stderr_, ms.n);
    }
    index += "</table>\n";
    write_file(out_dir / "auc_table.csv", csv, written);
  }

  if (!in.saliency.empty()) {
    index += "<h2>Saliency</h2>\n<p>Blue solid border: correct prediction. Red dashed border: wrong.</p>\n";
    for (const auto& panel : in.saliency) {
      const fs::path rel = fs::path("saliency") / (panel.id + ".png");
      write_rgb(out_dir / rel, saliency_overlay(panel.image, panel.map, panel.correct));
      written.push_back(out_dir / rel);
      index += fmt::format("<figure style=\"display:inline-block\"><img src=\"{}\" width=\"224\"/>"
                           "<figcaption>{}{}</figcaption></figure>\n",
                           rel.generic_string(), html_escape(panel.caption.empty() ? panel.id : panel.caption),
                           panel.map.all_zero ? " (all-zero map)" : "");
    }
  }

  index += "</body></html>\n";
  write_file(out_dir / "index.html", index, written);
  return written;
}

}  // namespace debias
