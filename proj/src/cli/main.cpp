// debias_lab: command-line entry point.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "debias/correlation.hpp"
#include "debias/environments.hpp"
#include "debias/errors.hpp"
#include "debias/evaluation.hpp"
#include "debias/image_io.hpp"
#include "debias/model_io.hpp"
#include "debias/synthetic.hpp"
#include "debias/training.hpp"
#include "debias/trap_split.hpp"

#ifndef DEBIAS_LAB_VERSION
#define DEBIAS_LAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace debias;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config;
  int jobs = 1;
  CLI::Option* seed_opt = nullptr;
};

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::array();
  std::vector<std::string> outputs;

  void input(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    inputs.push_back({{"path", p.string()}, {"fnv1a64", in ? fmt::format("{:016x}", fnv1a64(ss.str())) : "missing"}});
  }
  void output(const fs::path& p) { outputs.push_back(p.string()); }
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(fmt::format("cannot read '{}'", p.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", p.string(), e.what()));
  }
}

void write_json_file(const fs::path& p, const json& j, RunManifest& rm) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("cannot write '{}'", p.string()));
  rm.output(p);
}

void write_text_file(const fs::path& p, const std::string& text, RunManifest& rm) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError(fmt::format("cannot write '{}'", p.string()));
  rm.output(p);
}

/// Flag if given, else the config-file key, else the built-in default.
template <typename T>
T pick(const CLI::Option* opt, const T& flag_value, const json& file, const char* key, const T& fallback) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  if (file.contains(key)) {
    try {
      return file.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
    }
  }
  return fallback;
}

DatasetManifest load_input_manifest(const std::string& path, RunManifest& rm) {
  if (path.empty()) throw ConfigError("--manifest is required");
  rm.input(path);
  return load_manifest(path);
}

TrapSplit load_split(const std::string& path, RunManifest& rm) {
  rm.input(path);
  return trap_split_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 0;
  int image_size = 0;
  double prevalence = 0;
  double strength = 0;
  std::vector<std::string> bias;
  std::string prefix;
};

void run_synth(const Globals& g, const json& file, const SynthArgs& a, const CLI::App& cmd, RunManifest& rm) {
  SyntheticConfig c = file.get<SyntheticConfig>();
  if (cmd.count("--n")) c.n_samples = a.n;
  if (cmd.count("--image-size")) c.image_size = a.image_size;
  if (cmd.count("--prevalence")) c.class_prevalence = a.prevalence;
  if (cmd.count("--strength")) c.lesion_strength = a.strength;
  if (cmd.count("--prefix")) c.id_prefix = a.prefix;
  if (g.seed_opt->count() || !file.contains("seed")) c.seed = g.seed;
  for (const auto& spec : a.bias) {
    // name=marginal:correlation
    const auto eq = spec.find('=');
    const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || colon == std::string::npos)
      throw ConfigError(fmt::format("--bias expects name=marginal:correlation, got '{}'", spec));
    const int idx = artifact_index(spec.substr(0, eq));
    if (idx < 0) throw ConfigError(fmt::format("unknown artifact '{}'", spec.substr(0, eq)));
    try {
      c.artifacts[idx].marginal = std::stod(spec.substr(eq + 1, colon - eq - 1));
      c.artifacts[idx].correlation = std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("--bias: cannot parse numbers in '{}'", spec));
    }
  }
  rm.config = c;
  const auto m = generate_synthetic(c, g.out, g.jobs);
  rm.output(fs::path(g.out) / "manifest.csv");
  rm.output(fs::path(g.out) / "synthetic_config.json");
  std::cout << fmt::format("wrote {} records to {}\n", m.size(), g.out);
}

void run_audit(const Globals& g, const std::string& manifest, RunManifest& rm) {
  const auto m = load_input_manifest(manifest, rm);
  const auto report = correlation_report(m);
  rm.config = {{"manifest", manifest}};
  write_text_file(fs::path(g.out) / "correlations.csv", report_csv(report), rm);
  json prevalence = json::array();
  for (const auto& p : artifact_prevalence(m))
    prevalence.push_back({{"artifact", p.artifact}, {"overall", p.overall}, {"benign", p.benign}, {"melanoma", p.melanoma}});
  write_json_file(fs::path(g.out) / "audit.json",
                  {{"manifest", m.name()},
                   {"n", m.size()},
                   {"positives", m.count_label(1)},
                   {"correlations", report_json(report)},
                   {"artifact_prevalence", prevalence}},
                  rm);
  std::cout << report_csv(report);
}

struct SplitArgs {
  std::string manifest;
  double factor = 1.0;
  double test_fraction = 0.2;
  int swap_budget = kDefaultSwapBudget;
};

void run_split(const Globals& g, const json& file, const SplitArgs& a, const CLI::App& cmd, RunManifest& rm) {
  const auto manifest = pick(cmd.get_option("--manifest"), a.manifest, file, "manifest", std::string{});
  const auto m = load_input_manifest(manifest, rm);
  const double factor = pick(cmd.get_option("--factor"), a.factor, file, "factor", 1.0);
  const double tf = pick(cmd.get_option("--test-fraction"), a.test_fraction, file, "test_fraction", 0.2);
  const int budget = pick(cmd.get_option("--swap-budget"), a.swap_budget, file, "swap_budget", kDefaultSwapBudget);
  const auto seed = pick<std::uint64_t>(g.seed_opt, g.seed, file, "seed", g.seed);
  rm.config = {{"manifest", manifest}, {"factor", factor}, {"test_fraction", tf}, {"swap_budget", budget}, {"seed", seed}};
  const auto split = build_trap_split(m, factor, tf, seed, budget);
  write_json_file(fs::path(g.out) / "split.json", to_json(split), rm);
  write_text_file(fs::path(g.out) / "correlations.csv", report_csv(split.report, factor), rm);
  std::cout << report_csv(split.report, factor);
}

json environments_json(const EnvironmentPartition& envs) {
  json groups = json::array();
  for (const auto& [key, ids] : envs.members) {
    json present = json::array();
    for (std::size_t a = 0; a < kNumArtifacts; ++a)
      if (key.artifact_bitmask & (1u << a)) present.push_back(kArtifactNames[a]);
    groups.push_back({{"key", key.to_string()}, {"code", key.code()}, {"label", key.label},
                      {"artifacts", present}, {"size", ids.size()}, {"ids", ids}});
  }
  return {{"n_environments", envs.size()}, {"n_samples", envs.total()}, {"environments", groups}};
}

void run_envs(const Globals& g, const std::string& manifest, const std::string& split_path, RunManifest& rm) {
  const auto m = load_input_manifest(manifest, rm);
  std::vector<std::string> ids;
  if (split_path.empty()) {
    for (const auto& r : m.records()) ids.push_back(r.id);
  } else {
    ids = load_split(split_path, rm).train_ids;
  }
  rm.config = {{"manifest", manifest}, {"split", split_path}};
  const auto envs = build_environments(m, ids);
  write_json_file(fs::path(g.out) / "environments.json", environments_json(envs), rm);
  std::cout << fmt::format("{} non-empty environments over {} samples\n", envs.size(), envs.total());
}

struct TrainArgs {
  std::string manifest, split, method, grid = "none";
  double lr = 0, wd = 0, momentum = 0, eta_q = 0, adjustment = 0, rsc_p = 0, rsc_f = 0, val_fraction = 0;
  int epochs = 0, patience = 0, batch_size = 0, input_size = 0;
  bool no_augment = false;
};

TrainConfig train_config_from(const Globals& g, const json& file, const TrainArgs& a, const CLI::App& cmd) {
  json base = TrainConfig{};
  if (file.contains("train")) base.merge_patch(file.at("train"));
  TrainConfig c;
  try {
    c = base.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  if (cmd.count("--method")) c.method = method_from_string(a.method);
  if (cmd.count("--lr")) c.learning_rate = a.lr;
  if (cmd.count("--wd")) c.weight_decay = a.wd;
  if (cmd.count("--momentum")) c.momentum = a.momentum;
  if (cmd.count("--epochs")) c.max_epochs = a.epochs;
  if (cmd.count("--patience")) c.patience = a.patience;
  if (cmd.count("--batch-size")) c.batch_size = a.batch_size;
  if (cmd.count("--eta-q")) c.eta_q = a.eta_q;
  if (cmd.count("--adjustment")) c.adjustment = a.adjustment;
  if (cmd.count("--rsc-p")) c.rsc_percentile = a.rsc_p;
  if (cmd.count("--rsc-f")) c.rsc_fraction = a.rsc_f;
  if (cmd.count("--val-fraction")) c.val_fraction = a.val_fraction;
  if (cmd.count("--input-size")) c.model.input_size = a.input_size;
  if (a.no_augment) c.augmentation = AugmentRecipe::identity();
  if (g.seed_opt->count() || !(file.contains("train") && file.at("train").contains("seed"))) c.seed = g.seed;
  c.validate();
  return c;
}

void run_train(const Globals& g, const json& file, const TrainArgs& a, const CLI::App& cmd, RunManifest& rm) {
  const auto manifest = pick(cmd.get_option("--manifest"), a.manifest, file, "manifest", std::string{});
  const auto split_path = pick(cmd.get_option("--split"), a.split, file, "split", std::string{});
  const auto grid_name = pick(cmd.get_option("--grid"), a.grid, file, "grid", std::string{"none"});
  if (split_path.empty()) throw ConfigError("--split is required");
  const auto m = load_input_manifest(manifest, rm);
  const auto split = load_split(split_path, rm);
  TrainConfig config = train_config_from(g, file, a, cmd);

  const auto envs = build_environments(m, split.train_ids);
  std::vector<std::size_t> idx;
  for (const auto& id : split.train_ids) idx.push_back(m.require(id));
  const auto train_side = subset(m, idx, m.name() + "-train");
  const auto images = load_image_set(train_side, config.model.input_size);
  std::vector<std::size_t> all(images.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  const fs::path out(g.out);
  if (grid_name == "protocol") {
    auto grid = ParamGrid::protocol();
    if (config.method != Method::GroupDRO) grid.adjustments.clear();
    const auto gr = grid_search(images, all, &envs, grid, config);
    json board = json::array();
    for (const auto& row : gr.leaderboard)
      board.push_back({{"learning_rate", row.cell.learning_rate}, {"weight_decay", row.cell.weight_decay},
                       {"adjustment", row.cell.adjustment}, {"mean_val_auc", row.mean_score}, {"scores", row.scores}});
    json adj = json::array();
    for (const auto& row : gr.adjustment_leaderboard)
      adj.push_back({{"adjustment", row.cell.adjustment}, {"mean_val_auc", row.mean_score}, {"scores", row.scores}});
    write_json_file(out / "grid.json", {{"leaderboard", board}, {"adjustment_leaderboard", adj}, {"best", gr.best}}, rm);
    config = gr.best;
  } else if (grid_name != "none") {
    throw ConfigError(fmt::format("--grid must be 'none' or 'protocol', got '{}'", grid_name));
  }
  rm.config = {{"manifest", manifest}, {"split", split_path}, {"grid", grid_name}, {"train", config}};

  std::error_code ec;
  fs::remove(out / "metrics.jsonl", ec);
  const auto run = train(images, all, &envs, config, {out / "metrics.jsonl", [](const EpochMetrics& e) {
                                                        std::cout << fmt::format("epoch {:3d}  loss {:.4f}  val_auc {:.4f}\n",
                                                                                 e.epoch, e.train_loss, e.val_auc)
                                                                  << std::flush;
                                                      }});
  rm.output(out / "metrics.jsonl");
  save_model(out / "model.bin", *run.model, json(config));
  rm.output(out / "model.bin");
  auto summary = run_summary(run);
  summary.erase("wall_seconds");
  write_json_file(out / "train_run.json", summary, rm);
  std::cout << fmt::format("best epoch {} with validation AUC {:.4f}\n", run.best_epoch, run.best_val_auc);
}

void run_noisecrop(const Globals& g, const json& file, const std::string& manifest_flag, int size,
                   const CLI::App& cmd, RunManifest& rm) {
  const auto manifest = pick(cmd.get_option("--manifest"), manifest_flag, file, "manifest", std::string{});
  const auto m = load_input_manifest(manifest, rm);
  NoiseCropConfig c;
  c.output_size = pick(cmd.get_option("--output-size"), size, file, "output_size", c.output_size);
  c.noise_low = file.value("noise_low", c.noise_low);
  c.noise_high = file.value("noise_high", c.noise_high);
  c.seed = derive_seed(g.seed, "noisecrop");
  rm.config = {{"manifest", manifest}, {"output_size", c.output_size}, {"noise_low", c.noise_low},
               {"noise_high", c.noise_high}, {"seed", g.seed}};
  const auto res = batch_noisecrop(m, c, g.out, g.jobs);
  rm.output(fs::path(g.out) / "manifest.csv");
  rm.output(fs::path(g.out) / "noisecrop_summary.json");
  std::cout << fmt::format("{} transformed, {} fallback masks, {} failures\n", res.manifest.size(), res.fallback_count,
                           res.failures.size());
  if (!res.failures.empty())
    throw IoError(fmt::format("{} record(s) failed; see noisecrop_summary.json", res.failures.size()));
}

struct EvalArgs {
  std::string model, manifest, split;
  bool noisecrop = false;
  int tta = kDefaultTtaReplicas;
  int output_size = 224;
};

void run_eval(const Globals& g, const json& file, const EvalArgs& a, const CLI::App& cmd, RunManifest& rm) {
  const auto model_path = pick(cmd.get_option("--model"), a.model, file, "model", std::string{});
  const auto manifest = pick(cmd.get_option("--manifest"), a.manifest, file, "manifest", std::string{});
  const auto split_path = pick(cmd.get_option("--split"), a.split, file, "split", std::string{});
  const bool nc = pick(cmd.get_option("--noisecrop"), a.noisecrop, file, "noisecrop", false);
  const int tta = pick(cmd.get_option("--tta"), a.tta, file, "tta_replicas", kDefaultTtaReplicas);
  if (model_path.empty()) throw ConfigError("--model is required");
  rm.input(model_path);
  auto loaded = load_model(model_path);
  auto m = load_input_manifest(manifest, rm);
  if (!split_path.empty()) {
    const auto split = load_split(split_path, rm);
    std::vector<std::size_t> idx;
    for (const auto& id : split.test_ids) idx.push_back(m.require(id));
    m = subset(m, idx, m.name() + "-test");
  }
  ExternalEvalOptions opt;
  opt.noisecrop = nc;
  opt.noisecrop_config.output_size = pick(cmd.get_option("--output-size"), a.output_size, file, "output_size", 224);
  opt.noisecrop_config.seed = derive_seed(g.seed, "noisecrop");
  opt.tta_replicas = tta;
  if (loaded.config.contains("augmentation")) opt.augmentation = loaded.config.at("augmentation").get<AugmentRecipe>();
  opt.seed = derive_seed(g.seed, "tta");
  opt.work_dir = g.out;
  rm.config = {{"model", model_path}, {"manifest", manifest},   {"split", split_path}, {"noisecrop", nc},
               {"tta_replicas", tta}, {"output_size", opt.noisecrop_config.output_size}, {"seed", g.seed}};
  const auto report = evaluate_external(*loaded.model, m, opt);
  write_json_file(fs::path(g.out) / "eval_report.json", to_json(report), rm);
  std::cout << fmt::format("AUC {:.4f} on {} samples ({} TTA replicas{})\n", report.auc, report.n, report.tta_replicas,
                           nc ? ", NoiseCrop" : "");
}

struct SweepArgs {
  std::string manifest, id;
  std::vector<double> factors;
  std::vector<std::string> methods;
  int n_seeds = 0, tta = 0;
};

void run_sweep(const Globals& g, const json& file, const SweepArgs& a, const CLI::App& cmd, RunManifest& rm) {
  json cfg_json = file;
  std::string manifest = a.manifest;
  if (!cmd.count("--manifest")) {
    if (!cfg_json.contains("manifest")) throw ConfigError("sweep needs --manifest or a 'manifest' config key");
    fs::path p = cfg_json.at("manifest").get<std::string>();
    if (p.is_relative() && !g.config.empty()) p = fs::path(g.config).parent_path() / p;
    manifest = p.string();
  }
  cfg_json.erase("manifest");
  SweepConfig c = cfg_json.get<SweepConfig>();
  if (cmd.count("--factors")) c.factors = a.factors;
  if (cmd.count("--methods")) {
    c.methods.clear();
    for (const auto& s : a.methods) c.methods.push_back(SweepMethod::parse(s));
  }
  if (cmd.count("--n-seeds")) c.n_seeds = a.n_seeds;
  if (cmd.count("--tta")) c.tta_replicas = a.tta;
  if (cmd.count("--id")) c.sweep_id = a.id;
  if (g.seed_opt->count() || !file.contains("seed")) c.seed = g.seed;
  c.validate();
  const auto m = load_input_manifest(manifest, rm);
  rm.config = c;
  rm.config["manifest"] = manifest;
  const auto result = run_trap_sweep(m, c, g.out, g.jobs);
  const fs::path root = fs::path(g.out) / "runs" / c.sweep_id;
  for (const char* f : {"cells.csv", "aggregate.csv", "sweep.json", "sweep_config.json"}) rm.output(root / f);
  ReportInputs in;
  in.sweep = result;
  for (const auto& p : render_report(in, root / "report")) rm.output(p);
  for (const auto& agg : result.aggregates)
    std::cout << fmt::format("factor {:.2f}  {:<20} AUC {:.4f} +- {:.4f} (n={})\n", agg.factor, agg.method,
                             agg.auc.mean, agg.auc.stderr_, agg.auc.n);
}

struct SaliencyArgs {
  std::string model, manifest, layer = "block3";
  std::vector<std::string> ids;
  int limit = 8;
  int target = 1;
};

void run_saliency(const Globals& g, const SaliencyArgs& a, RunManifest& rm) {
  if (a.model.empty()) throw ConfigError("--model is required");
  rm.input(a.model);
  auto loaded = load_model(a.model);
  const auto m = load_input_manifest(a.manifest, rm);
  std::vector<std::size_t> idx;
  if (!a.ids.empty()) {
    for (const auto& id : a.ids) idx.push_back(m.require(id));
  } else {
    for (std::size_t i = 0; i < m.size() && static_cast<int>(i) < a.limit; ++i) idx.push_back(i);
  }
  rm.config = {{"model", a.model}, {"manifest", a.manifest}, {"layer", a.layer}, {"class", a.target}, {"ids", a.ids},
               {"limit", a.limit}};
  auto& model = *loaded.model;
  ReportInputs in;
  json maps = json::array();
  for (auto i : idx) {
    const auto& r = m[i];
    const cv::Mat rgb = read_rgb(m.resolve(r.image_path));
    Tensor4 x(1, 3, model.input_size(), model.input_size());
    image_to_chw(rgb, model.input_size(), x.data.data());
    const double p = model.predict_proba(x)[0];
    SaliencyPanel panel;
    panel.id = r.id;
    panel.image = rgb;
    panel.map = scorecam(model, x, a.layer, a.target);
    panel.correct = (p >= 0.5) == (r.label == 1);
    panel.caption = fmt::format("{} label={} p={:.3f}", r.id, r.label, p);
    maps.push_back({{"id", r.id}, {"label", r.label}, {"probability", p}, {"correct", panel.correct},
                    {"all_zero", panel.map.all_zero}});
    in.saliency.push_back(std::move(panel));
  }
  for (const auto& p : render_report(in, g.out)) rm.output(p);
  write_json_file(fs::path(g.out) / "saliency.json", {{"layer", a.layer}, {"class", a.target}, {"maps", maps}}, rm);
}

void run_report(const Globals& g, const std::string& sweep, const std::vector<std::string>& splits,
                const std::vector<std::string>& evals, RunManifest& rm) {
  ReportInputs in;
  if (!sweep.empty()) {
    rm.input(sweep);
    in.sweep = sweep_result_from_json(read_json_file(sweep));
  }
  for (const auto& s : splits) {
    const auto split = load_split(s, rm);
    in.correlations.emplace_back(split.factor, split.report);
  }
  for (const auto& e : evals) {
    rm.input(e);
    const auto j = read_json_file(e);
    MeanStderr ms;
    ms.mean = j.at("auc").get<double>();
    ms.n = 1;
    in.auc_table.emplace_back(fmt::format("{}{}", j.value("manifest", e), j.value("noisecrop", false) ? " (NoiseCrop)" : ""),
                              ms);
  }
  rm.config = {{"sweep", sweep}, {"splits", splits}, {"evals", evals}};
  for (const auto& p : render_report(in, g.out)) rm.output(p);
}

void write_run_manifest(const Globals& g, const RunManifest& rm, double seconds, int code, const std::string& error) {
  json j{{"command", rm.command},
         {"argv", rm.argv},
         {"config", rm.config},
         {"seed", g.seed},
         {"jobs", g.jobs},
         {"inputs", rm.inputs},
         {"outputs", rm.outputs},
         {"version", DEBIAS_LAB_VERSION},
         {"wall_seconds", seconds},
         {"exit_code", code},
         {"status", code == 0 ? "ok" : "error"}};
  if (!error.empty()) j["error"] = error;
  try {
    fs::create_directories(g.out);
    std::ofstream out(fs::path(g.out) / "run_manifest.json", std::ios::binary);
    out << j.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "warning: could not write run manifest: " << e.what() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiasing pipeline toolkit: trap sets, robust training, NoiseCrop, sweeps"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Global seed; all randomness derives from it");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON config file (flags take precedence)");
  app.add_option("--jobs", g.jobs, "Parallel workers")->check(CLI::PositiveNumber)->capture_default_str();
  app.set_version_flag("--version", DEBIAS_LAB_VERSION);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic biased dataset");
  synth->add_option("--n", sa.n, "Number of samples");
  synth->add_option("--image-size", sa.image_size, "Image side in pixels");
  synth->add_option("--prevalence", sa.prevalence, "Melanoma prevalence");
  synth->add_option("--strength", sa.strength, "Lesion signal strength");
  synth->add_option("--bias", sa.bias, "Artifact bias name=marginal:correlation (repeatable)");
  synth->add_option("--prefix", sa.prefix, "Sample id prefix");

  std::string audit_manifest;
  auto* audit = app.add_subcommand("audit", "Artifact/label correlations of a manifest");
  audit->add_option("--manifest", audit_manifest, "Manifest CSV")->required();

  SplitArgs sp;
  auto* split = app.add_subcommand("split", "Build a trap train/test split");
  split->add_option("--manifest", sp.manifest, "Manifest CSV");
  split->add_option("--factor", sp.factor, "Bias factor in [0, 1]");
  split->add_option("--test-fraction", sp.test_fraction, "Test share");
  split->add_option("--swap-budget", sp.swap_budget, "Swap refinement attempts");

  std::string env_manifest, env_split;
  auto* envs = app.add_subcommand("envs", "Partition training samples into artifact environments");
  envs->add_option("--manifest", env_manifest, "Manifest CSV")->required();
  envs->add_option("--split", env_split, "Trap split JSON (training side is partitioned)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train ERM, GroupDRO or RSC on a split's training side");
  trn->add_option("--manifest", ta.manifest, "Manifest CSV");
  trn->add_option("--split", ta.split, "Trap split JSON");
  trn->add_option("--method", ta.method, "ERM | GroupDRO | RSC");
  trn->add_option("--lr", ta.lr, "Learning rate");
  trn->add_option("--wd", ta.wd, "Weight decay");
  trn->add_option("--momentum", ta.momentum, "SGD momentum");
  trn->add_option("--epochs", ta.epochs, "Maximum epochs");
  trn->add_option("--patience", ta.patience, "Early-stopping patience");
  trn->add_option("--batch-size", ta.batch_size, "Batch size");
  trn->add_option("--eta-q", ta.eta_q, "GroupDRO weight step size");
  trn->add_option("--adjustment", ta.adjustment, "GroupDRO generalisation adjustment C");
  trn->add_option("--rsc-p", ta.rsc_p, "RSC drop percentile");
  trn->add_option("--rsc-f", ta.rsc_f, "RSC batch fraction");
  trn->add_option("--val-fraction", ta.val_fraction, "Validation share carved from training");
  trn->add_option("--input-size", ta.input_size, "Model input side");
  trn->add_option("--grid", ta.grid, "Hyper-parameter grid: none | protocol");
  trn->add_flag("--no-augment", ta.no_augment, "Disable augmentation");

  std::string nc_manifest;
  int nc_size = 224;
  auto* nc = app.add_subcommand("noisecrop", "Apply NoiseCrop to every record of a manifest");
  nc->add_option("--manifest", nc_manifest, "Manifest CSV");
  nc->add_option("--output-size", nc_size, "Output side in pixels");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "TTA AUC of a model on a manifest");
  ev->add_option("--model", ea.model, "Model file");
  ev->add_option("--manifest", ea.manifest, "Manifest CSV");
  ev->add_option("--split", ea.split, "Restrict to the test side of this split");
  ev->add_flag("--noisecrop", ea.noisecrop, "NoiseCrop the images first");
  ev->add_option("--tta", ea.tta, "TTA replicas");
  ev->add_option("--output-size", ea.output_size, "NoiseCrop output side");

  SweepArgs swa;
  auto* sw = app.add_subcommand("sweep", "Bias-factor sweep over methods and seeds");
  sw->add_option("--manifest", swa.manifest, "Manifest CSV");
  sw->add_option("--factors", swa.factors, "Bias factors")->delimiter(',');
  sw->add_option("--methods", swa.methods, "Methods, e.g. ERM,GroupDRO+NoiseCrop")->delimiter(',');
  sw->add_option("--n-seeds", swa.n_seeds, "Seeds per cell");
  sw->add_option("--tta", swa.tta, "TTA replicas");
  sw->add_option("--id", swa.id, "Sweep id (directory name under runs/)");

  SaliencyArgs sla;
  auto* sal = app.add_subcommand("saliency", "ScoreCAM overlays for manifest records");
  sal->add_option("--model", sla.model, "Model file")->required();
  sal->add_option("--manifest", sla.manifest, "Manifest CSV")->required();
  sal->add_option("--ids", sla.ids, "Record ids")->delimiter(',');
  sal->add_option("--limit", sla.limit, "Records when no ids are given");
  sal->add_option("--layer", sla.layer, "Target layer");
  sal->add_option("--class", sla.target, "Target class (0 or 1)");

  std::string rep_sweep;
  std::vector<std::string> rep_splits, rep_evals;
  auto* rep = app.add_subcommand("report", "Render plots and tables from saved results");
  rep->add_option("--sweep", rep_sweep, "sweep.json");
  rep->add_option("--split", rep_splits, "Split JSON files (correlation tables)");
  rep->add_option("--eval", rep_evals, "eval_report.json files (AUC table)");

  RunManifest rm;
  for (int i = 0; i < argc; ++i) rm.argv.emplace_back(argv[i]);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  rm.command = app.get_subcommands().front()->get_name();
  int code = 0;
  std::string error;
  try {
    json file = json::object();
    if (!g.config.empty()) {
      rm.input(g.config);
      file = read_json_file(g.config);
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    }
    if (synth->parsed()) run_synth(g, file, sa, *synth, rm);
    else if (audit->parsed()) run_audit(g, audit_manifest, rm);
    else if (split->parsed()) run_split(g, file, sp, *split, rm);
    else if (envs->parsed()) run_envs(g, env_manifest, env_split, rm);
    else if (trn->parsed()) run_train(g, file, ta, *trn, rm);
    else if (nc->parsed()) run_noisecrop(g, file, nc_manifest, nc_size, *nc, rm);
    else if (ev->parsed()) run_eval(g, file, ea, *ev, rm);
    else if (sw->parsed()) run_sweep(g, file, swa, *sw, rm);
    else if (sal->parsed()) run_saliency(g, sla, rm);
    else if (rep->parsed()) run_report(g, rep_sweep, rep_splits, rep_evals, rm);
  } catch (const ValidationError& e) {
    code = 1;
    error = e.what();
  } catch (const json::exception& e) {
    code = 1;
    error = e.what();
  } catch (const std::exception& e) {
    code = 2;
    error = e.what();
  }
  if (code != 0) std::cerr << "error: " << error << '\n';
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(g, rm, seconds, code, error);
  return code;
}
