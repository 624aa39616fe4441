#include "debias/environments.hpp"

#include <fmt/format.h>

#include <unordered_set>

#include "debias/errors.hpp"

namespace debias {

std::string EnvironmentKey::to_string() const {
  std::string bits;
  for (int i = 0; i < 7; ++i) bits += ((artifact_bitmask >> i) & 1) ? '1' : '0';
  return fmt::format("{}:{}", bits, label);
}

EnvironmentKey environment_key(const SampleRecord& r) {
  return {r.artifacts.bitmask(), r.label};
}

std::size_t EnvironmentPartition::group_size(const EnvironmentKey& k) const {
  auto it = members.find(k);
  return it == members.end() ? 0 : it->second.size();
}

std::size_t EnvironmentPartition::total() const {
  std::size_t n = 0;
  for (const auto& [k, ids] : members) n += ids.size();
  return n;
}

std::vector<EnvironmentKey> EnvironmentPartition::keys() const {
  std::vector<EnvironmentKey> out;
  out.reserve(members.size());
  for (const auto& [k, ids] : members) out.push_back(k);
  return out;
}

EnvironmentPartition build_environments(const DatasetManifest& m, const std::vector<std::string>& train_ids) {
  if (train_ids.empty()) throw ValidationError("build_environments: empty training set");
  EnvironmentPartition p;
  std::unordered_set<std::string> seen;
  for (const auto& id : train_ids) {
    if (!seen.insert(id).second) throw IntegrityError(fmt::format("training id '{}' repeated", id));
    const auto& r = m[m.require(id)];
    p.members[environment_key(r)].push_back(id);
  }
  return p;
}

}  // namespace debias
