#include "debias/correlation.hpp"

#include <fmt/format.h>

#include <cmath>

#include "debias/errors.hpp"

namespace debias {

std::optional<double> Contingency2x2::phi() const {
  const double x1 = static_cast<double>(n11 + n10), x0 = static_cast<double>(n01 + n00);
  const double y1 = static_cast<double>(n11 + n01), y0 = static_cast<double>(n10 + n00);
  if (x1 == 0 || x0 == 0 || y1 == 0 || y0 == 0) return std::nullopt;
  const double num = static_cast<double>(n11) * n00 - static_cast<double>(n10) * n01;
  double r = num / std::sqrt(x1 * x0 * y1 * y0);
  return std::clamp(r, -1.0, 1.0);
}

double spearman_binary(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size())
    throw ValueError(fmt::format("spearman_binary: length mismatch {} vs {}", x.size(), y.size()));
  if (x.size() < 2) throw ValueError("spearman_binary: need at least two observations");
  Contingency2x2 t;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if ((x[i] != 0 && x[i] != 1) || (y[i] != 0 && y[i] != 1))
      throw ValueError(fmt::format("spearman_binary: non-binary value at position {}", i));
    t.add(x[i] == 1, y[i] == 1);
  }
  if (auto r = t.phi()) return *r;
  throw UndefinedMetricError("spearman_binary: correlation undefined for a constant sequence");
}

const SplitCorrelations& CorrelationReport::row(std::string_view split) const {
  for (const auto& r : rows)
    if (r.split == split) return r;
  throw ValidationError(fmt::format("correlation report has no split '{}'", split));
}

namespace {

SplitCorrelations correlations_for(const DatasetManifest& m, const NamedSplit& s) {
  if (s.indices.empty()) throw ValidationError(fmt::format("split '{}' is empty", s.name));
  SplitCorrelations row;
  row.split = s.name;
  row.n = s.indices.size();
  std::array<Contingency2x2, kNumArtifacts> tables{};
  for (auto i : s.indices) {
    const auto& r = m[i];
    row.positives += r.label == 1;
    for (std::size_t a = 0; a < kNumArtifacts; ++a) tables[a].add(r.artifacts[a], r.label == 1);
  }
  for (std::size_t a = 0; a < kNumArtifacts; ++a) row.values[a] = tables[a].phi();
  return row;
}

}  // namespace

CorrelationReport correlation_report(const DatasetManifest& m, const std::vector<NamedSplit>& splits) {
  std::vector<int> seen(m.size(), 0);
  for (const auto& s : splits)
    for (auto i : s.indices) {
      if (i >= m.size()) throw IntegrityError(fmt::format("split '{}' index {} out of range", s.name, i));
      ++seen[i];
    }
  for (std::size_t i = 0; i < m.size(); ++i)
    if (seen[i] != 1)
      throw IntegrityError(fmt::format("record '{}' assigned to {} splits (expected exactly 1)", m[i].id, seen[i]));

  CorrelationReport rep;
  rep.manifest = m.name();
  for (const auto& s : splits) rep.rows.push_back(correlations_for(m, s));
  return rep;
}

CorrelationReport correlation_report(const DatasetManifest& m) {
  NamedSplit all{"all", {}};
  all.indices.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) all.indices[i] = i;
  return correlation_report(m, {all});
}

std::string report_csv(const CorrelationReport& r, std::optional<double> factor) {
  std::string out = "factor,set,n";
  for (auto name : kArtifactNames) out += fmt::format(",{}", name);
  out += '\n';
  for (const auto& row : r.rows) {
    out += factor ? fmt::format("{:g}", *factor) : std::string("NA");
    out += fmt::format(",{},{}", row.split, row.n);
    for (const auto& v : row.values) out += v ? fmt::format(",{:.3f}", *v) : std::string(",NA");
    out += '\n';
  }
  return out;
}

nlohmann::json report_json(const CorrelationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json vals = nlohmann::json::object();
    for (std::size_t a = 0; a < kNumArtifacts; ++a)
      vals[std::string(kArtifactNames[a])] = row.values[a] ? nlohmann::json(*row.values[a]) : nlohmann::json();
    rows.push_back({{"set", row.split}, {"n", row.n}, {"positives", row.positives}, {"spearman", vals}});
  }
  return {{"manifest", r.manifest}, {"rows", rows}};
}

}  // namespace debias
