#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <unordered_map>

#include "debias/environments.hpp"
#include "debias/errors.hpp"
#include "debias/evaluation.hpp"
#include "debias/model_io.hpp"
#include "debias/trap_split.hpp"

namespace fs = std::filesystem;

namespace debias {

namespace {

constexpr std::string_view kNoiseCropSuffix = "+NoiseCrop";

std::string csv_quote(std::string s) {
  std::replace(s.begin(), s.end(), '"', '\'');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return "\"" + s + "\"";
}

std::string factor_dir(double f) { return fmt::format("{:.2f}", f); }

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError(fmt::format("cannot write '{}'", p.string()));
}

nlohmann::json noisecrop_json(const NoiseCropConfig& c) {
  return {{"output_size", c.output_size}, {"noise_low", c.noise_low}, {"noise_high", c.noise_high}};
}

TrainConfig method_config(const SweepConfig& c, Method m) {
  nlohmann::json j = c.train;
  const auto it = c.method_overrides.find(std::string(to_string(m)));
  if (it != c.method_overrides.end()) j.merge_patch(it->second);
  TrainConfig out = j.get<TrainConfig>();
  out.method = m;
  return out;
}

}  // namespace

std::string SweepMethod::name() const {
  return std::string(to_string(training)) + (noisecrop ? std::string(kNoiseCropSuffix) : "");
}

SweepMethod SweepMethod::parse(std::string_view s) {
  SweepMethod m;
  if (s.size() > kNoiseCropSuffix.size() && s.ends_with(kNoiseCropSuffix)) {
    m.noisecrop = true;
    s.remove_suffix(kNoiseCropSuffix.size());
  }
  m.training = method_from_string(s);
  return m;
}

SweepConfig SweepConfig::protocol() { return SweepConfig{}; }

void SweepConfig::validate() const {
  if (factors.empty()) throw ConfigError("sweep: at least one bias factor is required");
  for (double f : factors)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(fmt::format("sweep: bias factor {} outside [0, 1]", f));
  for (std::size_t i = 0; i < factors.size(); ++i)
    for (std::size_t k = i + 1; k < factors.size(); ++k)
      if (factor_dir(factors[i]) == factor_dir(factors[k]))
        throw ConfigError(fmt::format("sweep: duplicate bias factor {}", factors[i]));
  if (methods.empty()) throw ConfigError("sweep: at least one method is required");
  for (std::size_t i = 0; i < methods.size(); ++i)
    for (std::size_t k = i + 1; k < methods.size(); ++k)
      if (methods[i] == methods[k]) throw ConfigError(fmt::format("sweep: duplicate method {}", methods[i].name()));
  if (n_seeds < 1) throw ConfigError("sweep: n_seeds must be at least 1");
  if (tta_replicas < 1) throw ConfigError("sweep: tta_replicas must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("sweep: test_fraction must be in (0, 1)");
  if (swap_budget < 0) throw ConfigError("sweep: swap_budget must be non-negative");
  if (sweep_id.empty() || sweep_id.find('/') != std::string::npos || sweep_id == "." || sweep_id == "..")
    throw ConfigError(fmt::format("sweep: invalid sweep id '{}'", sweep_id));
  for (const auto& [name, _] : method_overrides) method_from_string(name);
  noisecrop.validate();
  for (const auto& m : methods) {
    const auto cfg = method_config(*this, m.training);
    cfg.validate();
    if (cfg.model.input_size != train.model.input_size)
      throw ConfigError("sweep: method overrides may not change the model input size");
  }
}

void to_json(nlohmann::json& j, const SweepConfig& c) {
  std::vector<std::string> methods;
  for (const auto& m : c.methods) methods.push_back(m.name());
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [k, v] : c.method_overrides) overrides[k] = v;
  j = {{"factors", c.factors},
       {"methods", methods},
       {"n_seeds", c.n_seeds},
       {"seed", c.seed},
       {"test_fraction", c.test_fraction},
       {"swap_budget", c.swap_budget},
       {"train", c.train},
       {"method_overrides", overrides},
       {"tta_replicas", c.tta_replicas},
       {"noisecrop", noisecrop_json(c.noisecrop)},
       {"sweep_id", c.sweep_id},
       {"save_models", c.save_models}};
}

void from_json(const nlohmann::json& j, SweepConfig& c) {
  if (!j.is_object()) throw ConfigError("sweep config must be a JSON object");
  static const std::vector<std::string> known{"factors",   "methods",          "n_seeds",      "seed",
                                              "test_fraction", "swap_budget", "train",        "method_overrides",
                                              "tta_replicas",  "noisecrop",   "sweep_id",     "save_models"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError(fmt::format("sweep config: unknown key '{}'", k));
  try {
    if (j.contains("factors")) c.factors = j.at("factors").get<std::vector<double>>();
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& s : j.at("methods")) c.methods.push_back(SweepMethod::parse(s.get<std::string>()));
    }
    if (j.contains("n_seeds")) c.n_seeds = j.at("n_seeds").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("test_fraction")) c.test_fraction = j.at("test_fraction").get<double>();
    if (j.contains("swap_budget")) c.swap_budget = j.at("swap_budget").get<int>();
    if (j.contains("train")) {
      nlohmann::json base = c.train;
      base.merge_patch(j.at("train"));
      c.train = base.get<TrainConfig>();
    }
    if (j.contains("method_overrides"))
      for (const auto& [k, v] : j.at("method_overrides").items()) c.method_overrides[k] = v;
    if (j.contains("tta_replicas")) c.tta_replicas = j.at("tta_replicas").get<int>();
    if (j.contains("noisecrop")) {
      const auto& n = j.at("noisecrop");
      c.noisecrop.output_size = n.value("output_size", c.noisecrop.output_size);
      c.noisecrop.noise_low = n.value("noise_low", c.noisecrop.noise_low);
      c.noisecrop.noise_high = n.value("noise_high", c.noisecrop.noise_high);
    }
    if (j.contains("sweep_id")) c.sweep_id = j.at("sweep_id").get<std::string>();
    if (j.contains("save_models")) c.save_models = j.at("save_models").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("sweep config: {}", e.what()));
  }
}

const SweepAggregate* SweepResult::aggregate(double factor, std::string_view method) const {
  for (const auto& a : aggregates)
    if (std::abs(a.factor - factor) < 1e-12 && a.method == method) return &a;
  return nullptr;
}

std::vector<SweepAggregate> aggregate_cells(const std::vector<SweepCell>& cells, const std::vector<double>& factors,
                                            const std::vector<std::string>& methods) {
  std::vector<SweepAggregate> out;
  for (double f : factors) {
    for (const auto& m : methods) {
      std::vector<std::pair<int, double>> seeded;
      for (const auto& c : cells)
        if (c.factor == f && c.method == m && c.auc) seeded.emplace_back(c.seed, *c.auc);
      std::sort(seeded.begin(), seeded.end());
      std::vector<double> values;
      for (const auto& [_, v] : seeded) values.push_back(v);
      out.push_back({f, m, mean_stderr(values)});
    }
  }
  return out;
}

nlohmann::json to_json(const SweepResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cj{{"factor", c.factor}, {"method", c.method},   {"seed", c.seed},
                      {"n_test", c.n_test}, {"split_objective", c.split_objective}};
    cj["auc"] = c.auc ? nlohmann::json(*c.auc) : nlohmann::json(nullptr);
    if (!c.error.empty()) cj["error"] = c.error;
    cells.push_back(std::move(cj));
  }
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : r.aggregates)
    aggs.push_back({{"factor", a.factor},
                    {"method", a.method},
                    {"mean_auc", a.auc.n > 0 ? nlohmann::json(a.auc.mean) : nlohmann::json(nullptr)},
                    {"stderr", a.auc.stderr_},
                    {"n_seeds", a.auc.n}});
  return {{"sweep_id", r.sweep_id}, {"n_seeds", r.n_seeds}, {"factors", r.factors},
          {"methods", r.methods},   {"cells", cells},       {"aggregates", aggs}};
}

SweepResult sweep_result_from_json(const nlohmann::json& j) {
  try {
    SweepResult r;
    r.sweep_id = j.at("sweep_id").get<std::string>();
    r.n_seeds = j.at("n_seeds").get<int>();
    r.factors = j.at("factors").get<std::vector<double>>();
    r.methods = j.at("methods").get<std::vector<std::string>>();
    for (const auto& cj : j.at("cells")) {
      SweepCell c;
      c.factor = cj.at("factor").get<double>();
      c.method = cj.at("method").get<std::string>();
      c.seed = cj.at("seed").get<int>();
      c.n_test = cj.value("n_test", std::size_t{0});
      c.split_objective = cj.value("split_objective", 0.0);
      if (!cj.at("auc").is_null()) c.auc = cj.at("auc").get<double>();
      c.error = cj.value("error", std::string{});
      r.cells.push_back(std::move(c));
    }
    for (const auto& aj : j.at("aggregates")) {
      SweepAggregate a;
      a.factor = aj.at("factor").get<double>();
      a.method = aj.at("method").get<std::string>();
      a.auc.n = aj.at("n_seeds").get<int>();
      a.auc.mean = aj.at("mean_auc").is_null() ? 0.0 : aj.at("mean_auc").get<double>();
      a.auc.stderr_ = aj.at("stderr").get<double>();
      r.aggregates.push_back(std::move(a));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed sweep result: {}", e.what()));
  }
}

fs::path cache_root(const fs::path& fallback) {
  if (const char* env = std::getenv("DEBIAS_LAB_CACHE"); env != nullptr && *env != '\0') return fs::path(env);
  return fallback;
}

DatasetManifest noisecrop_cached(const DatasetManifest& m, const NoiseCropConfig& config, const fs::path& root,
                                 int jobs) {
  config.validate();
  // Key: record content plus the absolute location of the source images.
  const std::string key_text = format_manifest(m) + "\n" + fs::absolute(m.base_dir()).lexically_normal().string() +
                               "\n" + noisecrop_json(config).dump() + fmt::format("\n{}", config.seed);
  const fs::path dir = root / fmt::format("noisecrop-{:016x}", fnv1a64(key_text));
  const fs::path done = dir / ".complete";
  if (fs::exists(done)) return load_manifest(dir / "manifest.csv");

  const fs::path tmp = root / fmt::format("noisecrop-{:016x}.tmp-{}", fnv1a64(key_text),
                                          std::hash<std::thread::id>{}(std::this_thread::get_id()));
  std::error_code ec;
  fs::remove_all(tmp, ec);
  auto result = batch_noisecrop(m, config, tmp, jobs);
  write_text(tmp / ".complete", "");
  fs::rename(tmp, dir, ec);
  if (ec) {
    // Another writer finished first; its copy is equivalent.
    fs::remove_all(tmp, ec);
    if (!fs::exists(done)) throw IoError(fmt::format("cannot populate NoiseCrop cache '{}'", dir.string()));
  }
  return load_manifest(dir / "manifest.csv");
}

SweepResult run_trap_sweep(const DatasetManifest& m, const SweepConfig& config, const fs::path& out_dir, int jobs) {
  config.validate();
  const fs::path root = out_dir / "runs" / config.sweep_id;
  fs::create_directories(root);

  bool need_noisecrop = false;
  std::vector<Method> trained;
  for (const auto& sm : config.methods) {
    need_noisecrop |= sm.noisecrop;
    if (std::find(trained.begin(), trained.end(), sm.training) == trained.end()) trained.push_back(sm.training);
  }

  const int input_size = config.train.model.input_size;
  const ImageSet images = load_image_set(m, input_size);
  ImageSet nc_images;
  std::unordered_map<std::string, std::size_t> nc_index;
  if (need_noisecrop) {
    NoiseCropConfig nc = config.noisecrop;
    nc.seed = derive_seed(config.seed, "noisecrop");
    const auto nc_manifest = noisecrop_cached(m, nc, cache_root(root / "cache"), std::max(1, jobs));
    nc_images = load_image_set(nc_manifest, input_size);
    for (std::size_t i = 0; i < nc_images.count(); ++i) nc_index.emplace(nc_images.ids[i], i);
  }

  struct Task {
    double factor;
    int seed;
  };
  std::vector<Task> tasks;
  for (double f : config.factors)
    for (int s = 0; s < config.n_seeds; ++s) tasks.push_back({f, s});
  std::vector<std::vector<SweepCell>> outcomes(tasks.size());

  auto run_task = [&](std::size_t t) {
    const auto [factor, s] = tasks[t];
    const fs::path fdir = root / factor_dir(factor);
    std::vector<SweepCell> cells;
    for (const auto& sm : config.methods) cells.push_back({factor, sm.name(), s, std::nullopt, {}, 0, 0.0});

    TrapSplit split;
    EnvironmentPartition envs;
    try {
      split = build_trap_split(m, factor, config.test_fraction, derive_seed(config.seed, fmt::format("split-{}", s)),
                               config.swap_budget);
      envs = build_environments(m, split.train_ids);
      write_text(fdir / "splits" / fmt::format("{}.json", s), to_json(split).dump(2) + "\n");
    } catch (const std::exception& e) {
      for (auto& c : cells) c.error = fmt::format("split: {}", e.what());
      outcomes[t] = std::move(cells);
      return;
    }
    for (auto& c : cells) c.split_objective = split.objective;

    std::vector<std::size_t> train_idx, test_idx;
    for (const auto& id : split.train_ids) train_idx.push_back(m.require(id));
    for (const auto& id : split.test_ids) test_idx.push_back(m.require(id));
    std::vector<std::size_t> nc_test_idx;
    if (need_noisecrop)
      for (const auto& id : split.test_ids)
        if (auto it = nc_index.find(id); it != nc_index.end()) nc_test_idx.push_back(it->second);

    for (Method method : trained) {
      TrainConfig cfg = method_config(config, method);
      cfg.seed = derive_seed(config.seed, fmt::format("train-{}", s));
      const fs::path train_dir = fdir / std::string(to_string(method)) / std::to_string(s);
      std::error_code ec;
      fs::remove(train_dir / "metrics.jsonl", ec);
      TrainRun run;
      std::string error;
      try {
        run = train(images, train_idx, &envs, cfg, {train_dir / "metrics.jsonl", {}});
        auto summary = run_summary(run);
        summary.erase("wall_seconds");
        write_text(train_dir / "train_run.json", summary.dump(2) + "\n");
      } catch (const std::exception& e) {
        error = fmt::format("train: {}", e.what());
      }

      for (std::size_t k = 0; k < config.methods.size(); ++k) {
        const auto& sm = config.methods[k];
        if (sm.training != method) continue;
        auto& cell = cells[k];
        const fs::path cell_dir = fdir / sm.name() / std::to_string(s);
        if (!error.empty()) {
          cell.error = error;
        } else {
          try {
            const ImageSet& set = sm.noisecrop ? nc_images : images;
            const auto& idx = sm.noisecrop ? nc_test_idx : test_idx;
            const auto preds = predict_tta(*run.model, set, idx, config.tta_replicas, cfg.augmentation,
                                           derive_seed(config.seed, fmt::format("tta-{}", s)));
            cell.n_test = idx.size();
            cell.auc = roc_auc(preds);
          } catch (const std::exception& e) {
            cell.error = fmt::format("evaluate: {}", e.what());
          }
        }
        nlohmann::json rj{{"factor", factor},
                          {"method", sm.name()},
                          {"seed", s},
                          {"n_test", cell.n_test},
                          {"split_objective", cell.split_objective},
                          {"auc", cell.auc ? nlohmann::json(*cell.auc) : nlohmann::json(nullptr)}};
        if (!cell.error.empty()) rj["error"] = cell.error;
        if (run.model) rj["best_epoch"] = run.best_epoch, rj["best_val_auc"] = run.best_val_auc;
        write_text(cell_dir / "result.json", rj.dump(2) + "\n");
      }
      if (config.save_models && run.model) save_model(train_dir / "model.bin", *run.model, nlohmann::json(cfg));
    }
    outcomes[t] = std::move(cells);
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  if (workers == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < tasks.size(); t = next++) run_task(t);
      });
  }

  SweepResult result;
  result.sweep_id = config.sweep_id;
  result.n_seeds = config.n_seeds;
  result.factors = config.factors;
  for (const auto& sm : config.methods) result.methods.push_back(sm.name());
  for (auto& cells : outcomes)
    for (auto& c : cells) result.cells.push_back(std::move(c));
  result.aggregates = aggregate_cells(result.cells, result.factors, result.methods);

  std::string cells_csv = "factor,method,seed,auc,n_test,error\n";
  for (const auto& c : result.cells)
    cells_csv += fmt::format("{:.2f},{},{},{},{},{}\n", c.factor, c.method, c.seed,
                             c.auc ? fmt::format("{:.6f}", *c.auc) : "NA", c.n_test, csv_quote(c.error));
  std::string agg_csv = "factor,method,n_seeds,mean_auc,stderr\n";
  for (const auto& a : result.aggregates)
    agg_csv += fmt::format("{:.2f},{},{},{},{:.6f}\n", a.factor, a.method, a.auc.n,
                           a.auc.n > 0 ? fmt::format("{:.6f}", a.auc.mean) : "NA", a.auc.stderr_);
  write_text(root / "cells.csv", cells_csv);
  write_text(root / "aggregate.csv", agg_csv);
  write_text(root / "sweep.json", to_json(result).dump(2) + "\n");
  write_text(root / "sweep_config.json", nlohmann::json(config).dump(2) + "\n");
  return result;
}

}  // namespace debias
