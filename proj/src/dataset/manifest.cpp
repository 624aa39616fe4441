#include "debias/manifest.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "debias/errors.hpp"

namespace debias {

namespace fs = std::filesystem;

std::string_view to_string(AnnotationSource s) {
  return s == AnnotationSource::GroundTruth ? "ground_truth" : "inferred";
}

AnnotationSource annotation_source_from_string(std::string_view s, const std::string& row_id) {
  if (s == "ground_truth") return AnnotationSource::GroundTruth;
  if (s == "inferred") return AnnotationSource::Inferred;
  throw ValueError(fmt::format("row '{}': annotation_source must be ground_truth or inferred, got '{}'",
                               row_id, s),
                   row_id);
}

DatasetManifest::DatasetManifest(std::string name, std::vector<SampleRecord> records,
                                 fs::path base_dir)
    : name_(std::move(name)), records_(std::move(records)), base_dir_(std::move(base_dir)) {
  by_id_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] = by_id_.emplace(records_[i].id, i);
    if (!inserted)
      throw IntegrityError(fmt::format("duplicate sample id '{}'", records_[i].id));
  }
}

fs::path DatasetManifest::resolve(const std::string& path) const {
  fs::path p(path);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

std::optional<std::size_t> DatasetManifest::index_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t DatasetManifest::require(std::string_view id) const {
  if (auto i = index_of(id)) return *i;
  throw IntegrityError(fmt::format("id '{}' not in manifest '{}'", id, name_));
}

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.label);
  return out;
}

std::size_t DatasetManifest::count_label(int label) const {
  std::size_t n = 0;
  for (const auto& r : records_) n += r.label == label;
  return n;
}

double DatasetManifest::prevalence() const {
  return records_.empty() ? 0.0 : static_cast<double>(count_label(1)) / records_.size();
}

const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"id", "image_path", "label"};
    for (auto n : kArtifactNames) c.emplace_back(n);
    c.emplace_back("mask_path");
    c.emplace_back("annotation_source");
    return c;
  }();
  return cols;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

int parse_binary(const std::string& cell, const std::string& column, const std::string& row_id) {
  if (cell == "0") return 0;
  if (cell == "1") return 1;
  throw ValueError(fmt::format("row '{}': column '{}' must be 0 or 1, got '{}'", row_id, column, cell),
                   row_id);
}

}  // namespace

DatasetManifest parse_manifest(std::string_view csv, std::string name, const fs::path& base_dir,
                               const LoadOptions& opts) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("manifest is empty: missing header", "id");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);

  const auto& cols = manifest_columns();
  std::vector<int> col_index(cols.size(), -1);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t h = 0; h < header.size(); ++h)
      if (header[h] == cols[c]) col_index[c] = static_cast<int>(h);
    if (col_index[c] < 0)
      throw SchemaError(fmt::format("manifest is missing column '{}'", cols[c]), cols[c]);
  }
  std::vector<std::string> extra_cols;
  std::vector<std::size_t> extra_index;
  for (std::size_t h = 0; h < header.size(); ++h) {
    bool known = false;
    for (int ci : col_index) known |= ci == static_cast<int>(h);
    if (!known) {
      extra_cols.push_back(header[h]);
      extra_index.push_back(h);
    }
  }

  std::vector<SampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    const std::string row_label = cells.empty() ? fmt::format("line {}", line_no) : cells[0];
    if (cells.size() != header.size())
      throw ValueError(fmt::format("row '{}': expected {} cells, got {}", row_label, header.size(),
                                   cells.size()),
                       row_label);
    auto cell = [&](std::size_t c) -> const std::string& { return cells[col_index[c]]; };

    SampleRecord r;
    r.id = cell(0);
    if (r.id.empty()) throw ValueError(fmt::format("line {}: empty id", line_no));
    r.image_path = cell(1);
    r.label = parse_binary(cell(2), "label", r.id);
    for (std::size_t a = 0; a < kNumArtifacts; ++a)
      r.artifacts.set(a, parse_binary(cell(3 + a), cols[3 + a], r.id) == 1);
    if (!cell(10).empty()) r.mask_path = cell(10);
    r.annotation_source = annotation_source_from_string(cell(11), r.id);
    for (auto h : extra_index) r.extras.push_back(cells[h]);
    records.push_back(std::move(r));
  }

  DatasetManifest m(std::move(name), std::move(records), base_dir);
  m.extra_columns = std::move(extra_cols);
  if (m.size() == 0) throw ValueError("manifest has no records");
  if (opts.require_both_labels && (m.count_label(0) == 0 || m.count_label(1) == 0))
    throw ValueError(fmt::format("manifest '{}' must contain both labels", m.name()));
  if (opts.check_files) {
    for (const auto& r : m.records()) {
      if (!fs::exists(m.resolve(r.image_path)))
        throw IoError(fmt::format("row '{}': image '{}' not found", r.id, r.image_path));
      if (r.mask_path && !fs::exists(m.resolve(*r.mask_path)))
        throw IoError(fmt::format("row '{}': mask '{}' not found", r.id, *r.mask_path));
    }
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open manifest '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.stem().string(), path.parent_path(), opts);
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  const auto& cols = manifest_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out += ',';
    out += cols[c];
  }
  for (const auto& e : m.extra_columns) out += ',' + csv_field(e);
  out += '\n';
  for (const auto& r : m.records()) {
    out += csv_field(r.id);
    out += ',';
    out += csv_field(r.image_path);
    out += r.label ? ",1" : ",0";
    for (std::size_t a = 0; a < kNumArtifacts; ++a) out += r.artifacts[a] ? ",1" : ",0";
    out += ',';
    if (r.mask_path) out += csv_field(*r.mask_path);
    out += ',';
    out += to_string(r.annotation_source);
    for (std::size_t e = 0; e < m.extra_columns.size(); ++e) {
      out += ',';
      if (e < r.extras.size()) out += csv_field(r.extras[e]);
    }
    out += '\n';
  }
  return out;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write manifest '{}'", path.string()));
  out << format_manifest(m);
  if (!out) throw IoError(fmt::format("failed writing manifest '{}'", path.string()));
}

DatasetManifest subset(const DatasetManifest& m, const std::vector<std::size_t>& indices,
                       std::string name) {
  std::vector<SampleRecord> recs;
  recs.reserve(indices.size());
  for (auto i : indices) recs.push_back(m[i]);
  DatasetManifest out(std::move(name), std::move(recs), m.base_dir());
  out.extra_columns = m.extra_columns;
  out.provenance = m.provenance;
  return out;
}

}  // namespace debias
