#include <algorithm>

#include "debias/errors.hpp"
#include "debias/noisecrop.hpp"

namespace debias {

std::string_view to_string(MaskProvenance p) {
  switch (p) {
    case MaskProvenance::GroundTruth: return "ground_truth";
    case MaskProvenance::Inferred: return "inferred";
    case MaskProvenance::Fallback: return "fallback";
  }
  return "?";
}

std::size_t BitMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

BitMask BitMask::from_mat(const cv::Mat& m, MaskProvenance provenance) {
  CV_Assert(m.type() == CV_8UC1);
  BitMask out(m.cols, m.rows);
  out.provenance = provenance;
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) out.set(x, y, row[x] > 0);
  }
  return out;
}

cv::Mat BitMask::to_mat() const {
  cv::Mat m(height, width, CV_8UC1);
  for (int y = 0; y < height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < width; ++x) row[x] = at(x, y) ? 255 : 0;
  }
  return m;
}

namespace {

std::int64_t cross(const cv::Point& o, const cv::Point& a, const cv::Point& b) {
  return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) - static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<cv::Point> hull_vertices(const BitMask& mask) {
  // Only the leftmost and rightmost foreground pixel of each row can be hull
  // vertices.
  std::vector<cv::Point> pts;
  for (int y = 0; y < mask.height; ++y) {
    int lo = -1, hi = -1;
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        if (lo < 0) lo = x;
        hi = x;
      }
    if (lo < 0) continue;
    pts.emplace_back(lo, y);
    if (hi != lo) pts.emplace_back(hi, y);
  }
  if (pts.empty()) throw EmptyMaskError("convex hull of an empty mask");

  std::sort(pts.begin(), pts.end(), [](const cv::Point& a, const cv::Point& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  // Andrew's monotone chain; strict turns only, so collinear points drop out.
  std::vector<cv::Point> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

BitMask convex_hull(const BitMask& mask) {
  const auto v = hull_vertices(mask);
  BitMask out(mask.width, mask.height);
  out.provenance = mask.provenance;
  out.low_confidence = mask.low_confidence;

  int x0 = v[0].x, x1 = v[0].x, y0 = v[0].y, y1 = v[0].y;
  for (const auto& p : v) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }

  if (v.size() == 1) {
    out.set(v[0].x, v[0].y);
    return out;
  }
  if (v.size() == 2) {
    // Degenerate hull: pixel centers on the segment.
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (cross(v[0], v[1], cv::Point(x, y)) == 0) out.set(x, y);
    return out;
  }
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const cv::Point p(x, y);
      bool inside = true;
      for (std::size_t i = 0; i < v.size() && inside; ++i)
        inside = cross(v[i], v[(i + 1) % v.size()], p) >= 0;
      if (inside) out.set(x, y);
    }
  return out;
}

}  // namespace debias
