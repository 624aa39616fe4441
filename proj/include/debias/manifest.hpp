#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "debias/artifacts.hpp"

namespace debias {

enum class AnnotationSource { GroundTruth, Inferred };

std::string_view to_string(AnnotationSource s);
AnnotationSource annotation_source_from_string(std::string_view s, const std::string& row_id = {});

struct SampleRecord {
  std::string id;
  std::string image_path;
  int label = 0;  // 0 = benign, 1 = melanoma
  ArtifactVector artifacts;
  std::optional<std::string> mask_path;
  AnnotationSource annotation_source = AnnotationSource::GroundTruth;
  // Values of any columns after the fixed schema, aligned with
  // DatasetManifest::extra_columns.
  std::vector<std::string> extras;
};

/// Ordered sample records plus free-form provenance. Treat as immutable once
/// built; lookups by id go through index_of().
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::string name, std::vector<SampleRecord> records,
                  std::filesystem::path base_dir = {});

  const std::string& name() const { return name_; }
  const std::vector<SampleRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const SampleRecord& operator[](std::size_t i) const { return records_[i]; }

  const std::filesystem::path& base_dir() const { return base_dir_; }
  /// Relative image/mask paths are relative to the manifest's directory.
  std::filesystem::path resolve(const std::string& path) const;

  std::optional<std::size_t> index_of(std::string_view id) const;
  /// Index of `id`; throws IntegrityError if absent.
  std::size_t require(std::string_view id) const;

  std::vector<int> labels() const;
  std::size_t count_label(int label) const;
  double prevalence() const;

  std::map<std::string, std::string> provenance;
  std::vector<std::string> extra_columns;

 private:
  std::string name_;
  std::vector<SampleRecord> records_;
  std::filesystem::path base_dir_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Fixed column order of the manifest CSV.
const std::vector<std::string>& manifest_columns();

struct LoadOptions {
  bool check_files = true;
  // Reject manifests that miss one of the classes.
  bool require_both_labels = true;
};

DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});
DatasetManifest parse_manifest(std::string_view csv, std::string name,
                               const std::filesystem::path& base_dir,
                               const LoadOptions& opts = {});

std::string format_manifest(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// Subset of `m` in the given index order (used for split sides).
DatasetManifest subset(const DatasetManifest& m, const std::vector<std::size_t>& indices,
                       std::string name);

}  // namespace debias
