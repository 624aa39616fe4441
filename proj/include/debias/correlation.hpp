#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/artifacts.hpp"
#include "debias/manifest.hpp"

namespace debias {

/// Spearman rank correlation of two binary sequences (average-tie ranks).
/// For 0/1 data this is the phi coefficient of the 2x2 table, which is how it
/// is computed. Throws UndefinedMetricError if either sequence is constant,
/// ValueError on non-binary input or mismatched lengths.
double spearman_binary(std::span<const int> x, std::span<const int> y);

/// Counts of a binary pair; phi() is undefined (nullopt) if a margin is zero.
struct Contingency2x2 {
  long n11 = 0, n10 = 0, n01 = 0, n00 = 0;  // n<x><y>

  void add(bool x, bool y, long w = 1) {
    (x ? (y ? n11 : n10) : (y ? n01 : n00)) += w;
  }
  long total() const { return n11 + n10 + n01 + n00; }
  std::optional<double> phi() const;
};

struct SplitCorrelations {
  std::string split;
  std::size_t n = 0;
  std::size_t positives = 0;
  // nullopt where the artifact is constant within the split.
  std::array<std::optional<double>, kNumArtifacts> values{};
};

/// Table-1-style layout: one row per split, one column per artifact.
struct CorrelationReport {
  std::string manifest;
  std::vector<SplitCorrelations> rows;

  const SplitCorrelations& row(std::string_view split) const;
};

struct NamedSplit {
  std::string name;
  std::vector<std::size_t> indices;  // into the manifest
};

/// Throws ValidationError on an empty split side and IntegrityError if the
/// splits do not cover every record exactly once.
CorrelationReport correlation_report(const DatasetManifest& m, const std::vector<NamedSplit>& splits);

/// Correlations over the whole manifest as a single "all" row.
CorrelationReport correlation_report(const DatasetManifest& m);

/// CSV with header `factor,set,n,dark_corner,...`; undefined cells are "NA".
std::string report_csv(const CorrelationReport& r, std::optional<double> factor = std::nullopt);
nlohmann::json report_json(const CorrelationReport& r);

}  // namespace debias
