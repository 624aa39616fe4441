#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "debias/manifest.hpp"

namespace debias {

/// (artifact bitmask, label): 128 * 2 = 256 possible keys.
struct EnvironmentKey {
  std::uint8_t artifact_bitmask = 0;
  int label = 0;

  /// Dense code in [0, 256): label * 128 + bitmask.
  int code() const { return label * 128 + artifact_bitmask; }
  static EnvironmentKey from_code(int code) {
    return {static_cast<std::uint8_t>(code & 0x7F), code >> 7};
  }
  std::string to_string() const;

  friend auto operator<=>(const EnvironmentKey&, const EnvironmentKey&) = default;
};

inline constexpr int kMaxEnvironments = 256;

EnvironmentKey environment_key(const SampleRecord& r);

/// Non-empty environments of a training set. Members keep training-id order.
struct EnvironmentPartition {
  std::map<EnvironmentKey, std::vector<std::string>> members;

  std::size_t size() const { return members.size(); }
  std::size_t group_size(const EnvironmentKey& k) const;
  std::size_t total() const;
  std::vector<EnvironmentKey> keys() const;
};

/// Throws IntegrityError for ids missing from the manifest or repeated ids,
/// ValidationError for an empty training set.
EnvironmentPartition build_environments(const DatasetManifest& m, const std::vector<std::string>& train_ids);

}  // namespace debias
