#include "debias/trap_split.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "debias/errors.hpp"
#include "debias/random.hpp"

namespace debias {

namespace {

using SideTables = std::array<std::array<Contingency2x2, kNumArtifacts>, 2>;

SideTables tabulate(const DatasetManifest& m, const std::vector<Side>& sides) {
  SideTables t{};
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto s = static_cast<int>(sides[i]);
    for (std::size_t a = 0; a < kNumArtifacts; ++a) t[s][a].add(m[i].artifacts[a], m[i].label == 1);
  }
  return t;
}

double objective_of(const SideTables& t, const std::array<int, kNumArtifacts>& signs) {
  double j = 0.0;
  for (std::size_t a = 0; a < kNumArtifacts; ++a) {
    if (signs[a] == 0) continue;
    j += signs[a] * (t[0][a].phi().value_or(0.0) - t[1][a].phi().value_or(0.0));
  }
  return j;
}

void move(SideTables& t, const SampleRecord& r, Side from, Side to) {
  for (std::size_t a = 0; a < kNumArtifacts; ++a) {
    t[static_cast<int>(from)][a].add(r.artifacts[a], r.label == 1, -1);
    t[static_cast<int>(to)][a].add(r.artifacts[a], r.label == 1, +1);
  }
}

void check_inputs(const DatasetManifest& m, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError(fmt::format("test_fraction {} must lie in (0, 1)", test_fraction));
  if (m.count_label(0) == 0 || m.count_label(1) == 0)
    throw ValidationError(fmt::format("manifest '{}' has a single class; trap split needs both", m.name()));
}

std::size_t test_count(std::size_t n_class, double test_fraction) {
  auto k = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_class)));
  return std::min(k, n_class);
}

}  // namespace

std::array<int, kNumArtifacts> artifact_signs(const DatasetManifest& m) {
  std::array<Contingency2x2, kNumArtifacts> t{};
  for (const auto& r : m.records())
    for (std::size_t a = 0; a < kNumArtifacts; ++a) t[a].add(r.artifacts[a], r.label == 1);
  std::array<int, kNumArtifacts> s{};
  for (std::size_t a = 0; a < kNumArtifacts; ++a) {
    const double v = t[a].phi().value_or(0.0);
    // n * phi^2 is the 2x2 chi-square statistic; weak associations stay untargeted.
    if (static_cast<double>(t[a].total()) * v * v <= kSignificanceChiSquare) continue;
    s[a] = v > 0.0 ? 1 : -1;
  }
  return s;
}

double trap_objective(const DatasetManifest& m, const std::vector<Side>& sides,
                      const std::array<int, kNumArtifacts>& signs) {
  return objective_of(tabulate(m, sides), signs);
}

TrapAssignment trap_assignment(const DatasetManifest& m, double test_fraction, std::uint64_t seed,
                               int swap_budget) {
  check_inputs(m, test_fraction);
  TrapAssignment out;
  out.signs = artifact_signs(m);
  out.sides.assign(m.size(), Side::Train);

  std::vector<int> score(m.size(), 0);
  std::vector<std::uint64_t> tie(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m[i];
    int sc = 0;
    for (std::size_t a = 0; a < kNumArtifacts; ++a) sc += r.artifacts[a] ? out.signs[a] : 0;
    score[i] = sc * (2 * r.label - 1);
    tie[i] = fnv1a64(r.id);
  }

  std::array<std::vector<std::size_t>, 2> train_of, test_of;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].label == c) members.push_back(i);
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      if (tie[a] != tie[b]) return tie[a] < tie[b];
      return m[a].id < m[b].id;
    });
    const std::size_t n_test = test_count(members.size(), test_fraction);
    const std::size_t n_train = members.size() - n_test;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const bool to_train = k < n_train;
      out.sides[members[k]] = to_train ? Side::Train : Side::Test;
      (to_train ? train_of[c] : test_of[c]).push_back(members[k]);
    }
  }

  SideTables tables = tabulate(m, out.sides);
  double j = objective_of(tables, out.signs);
  out.objective_ranked = j;

  Rng rng(derive_seed(seed, "trap-swap"));
  for (int it = 0; it < swap_budget; ++it) {
    const int c = static_cast<int>(rng.below(2));
    if (train_of[c].empty() || test_of[c].empty()) continue;
    const auto ti = rng.below(train_of[c].size());
    const auto si = rng.below(test_of[c].size());
    const std::size_t a = train_of[c][ti], b = test_of[c][si];
    move(tables, m[a], Side::Train, Side::Test);
    move(tables, m[b], Side::Test, Side::Train);
    const double candidate = objective_of(tables, out.signs);
    if (candidate > j + 1e-12) {
      j = candidate;
      out.sides[a] = Side::Test;
      out.sides[b] = Side::Train;
      train_of[c][ti] = b;
      test_of[c][si] = a;
      ++out.accepted_swaps;
      out.objective_trace.push_back(j);
    } else {
      move(tables, m[a], Side::Test, Side::Train);
      move(tables, m[b], Side::Train, Side::Test);
    }
  }
  out.objective = j;
  return out;
}

TrapSplit build_trap_split(const DatasetManifest& m, double factor, double test_fraction, std::uint64_t seed,
                           int swap_budget) {
  if (!(factor >= 0.0 && factor <= 1.0))
    throw ConfigError(fmt::format("bias factor {} must lie in [0, 1]", factor));
  const auto trap = trap_assignment(m, test_fraction, seed, swap_budget);

  Rng rng(derive_seed(seed, "trap-mix"));
  std::vector<Side> sides(m.size());
  std::vector<bool> keep(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) keep[i] = rng.bernoulli(factor);

  for (int c = 0; c < 2; ++c) {
    std::size_t train_slots = 0, kept_train = 0;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].label != c) continue;
      train_slots += trap.sides[i] == Side::Train;
      if (keep[i]) {
        sides[i] = trap.sides[i];
        kept_train += trap.sides[i] == Side::Train;
      } else {
        pool.push_back(i);
      }
    }
    shuffle(pool.begin(), pool.end(), rng);
    const std::size_t to_train = train_slots - kept_train;
    for (std::size_t k = 0; k < pool.size(); ++k) sides[pool[k]] = k < to_train ? Side::Train : Side::Test;
  }

  TrapSplit split;
  split.factor = factor;
  split.seed = seed;
  split.test_fraction = test_fraction;
  NamedSplit train{"train", {}}, test{"test", {}};
  std::size_t agree = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    agree += sides[i] == trap.sides[i];
    if (sides[i] == Side::Train) {
      split.train_ids.push_back(m[i].id);
      train.indices.push_back(i);
    } else {
      split.test_ids.push_back(m[i].id);
      test.indices.push_back(i);
    }
  }
  split.trap_agreement = static_cast<double>(agree) / static_cast<double>(m.size());
  split.objective = trap_objective(m, sides, trap.signs);
  split.report = correlation_report(m, {train, test});
  return split;
}

std::vector<Side> sides_of(const DatasetManifest& m, const TrapSplit& split) {
  std::vector<int> seen(m.size(), 0);
  std::vector<Side> sides(m.size(), Side::Train);
  for (const auto& id : split.train_ids) ++seen[m.require(id)];
  for (const auto& id : split.test_ids) {
    auto i = m.require(id);
    ++seen[i];
    sides[i] = Side::Test;
  }
  for (std::size_t i = 0; i < m.size(); ++i)
    if (seen[i] != 1) throw IntegrityError(fmt::format("split does not place '{}' exactly once", m[i].id));
  return sides;
}

nlohmann::json to_json(const TrapSplit& s) {
  return {{"factor", s.factor},
          {"seed", s.seed},
          {"test_fraction", s.test_fraction},
          {"train_ids", s.train_ids},
          {"test_ids", s.test_ids},
          {"objective", s.objective},
          {"trap_agreement", s.trap_agreement},
          {"correlations", report_json(s.report)}};
}

TrapSplit trap_split_from_json(const nlohmann::json& j) {
  TrapSplit s;
  s.factor = j.at("factor").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.test_fraction = j.at("test_fraction").get<double>();
  s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  s.objective = j.at("objective").get<double>();
  s.trap_agreement = j.value("trap_agreement", 0.0);
  if (j.contains("correlations")) {
    const auto& c = j.at("correlations");
    s.report.manifest = c.value("manifest", "");
    for (const auto& row : c.at("rows")) {
      SplitCorrelations r;
      r.split = row.at("set").get<std::string>();
      r.n = row.at("n").get<std::size_t>();
      r.positives = row.value("positives", std::size_t{0});
      for (std::size_t a = 0; a < kNumArtifacts; ++a) {
        const auto& v = row.at("spearman").at(std::string(kArtifactNames[a]));
        if (!v.is_null()) r.values[a] = v.get<double>();
      }
      s.report.rows.push_back(std::move(r));
    }
  }
  return s;
}

}  // namespace debias
