// Acceptance suite: one PASS/FAIL line per criterion. Usage: acceptance [N ...]

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "debias/correlation.hpp"
#include "debias/evaluation.hpp"
#include "debias/metrics.hpp"
#include "debias/noisecrop.hpp"
#include "debias/synthetic.hpp"
#include "debias/training.hpp"
#include "debias/trap_split.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace debias;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, std::string what) {
    if (!ok) pass = false;
    notes.push_back(fmt::format("{}{}", ok ? "" : "FAILED ", what));
  }
};

std::vector<std::size_t> iota_idx(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

/// Random normalised images; every record in environment `env_code`.
ImageSet noise_images(int n, int size, std::uint64_t seed, int env_code) {
  ImageSet s;
  s.size = size;
  s.pixels.resize(static_cast<std::size_t>(n) * s.sample_size());
  Rng rng(seed);
  for (auto& v : s.pixels) v = static_cast<float>(rng.normal());
  for (int i = 0; i < n; ++i) {
    s.ids.push_back(fmt::format("img{:04d}", i));
    s.labels.push_back(i % 2);
    s.env_codes.push_back(env_code);
  }
  // Give class 1 a brighter centre so validation AUC moves between epochs.
  for (int i = 1; i < n; i += 2)
    for (int c = 0; c < 3; ++c)
      for (int y = size / 4; y < 3 * size / 4; ++y)
        for (int x = size / 4; x < 3 * size / 4; ++x) s.sample(i)[(c * size + y) * size + x] += 0.7f;
  return s;
}

bool same_run(const TrainRun& a, const TrainRun& b) {
  if (a.epochs.size() != b.epochs.size() || a.best_epoch != b.best_epoch) return false;
  for (std::size_t e = 0; e < a.epochs.size(); ++e)
    if (a.epochs[e].train_loss != b.epochs[e].train_loss || a.epochs[e].val_auc != b.epochs[e].val_auc) return false;
  return snapshot_parameters(*a.model) == snapshot_parameters(*b.model);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  Rng rng(1);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 3 + static_cast<int>(rng.below(200));
    std::vector<int> x(n), y(n);
    for (int i = 0; i < n; ++i) x[i] = rng.bernoulli(0.1 + 0.8 * rng.uniform()), y[i] = rng.bernoulli(0.5);
    x[0] = 0, x[1] = 1, y[0] = 0, y[1] = 1;
    worst = std::max(worst, std::abs(spearman_binary(x, y) - oracle::spearman(x, y)));
  }
  o.require(worst < 1e-9, fmt::format("spearman max err {:.2e}", worst));

  worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const int n = 2 + static_cast<int>(rng.below(150));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) s[i] = static_cast<double>(rng.below(10)), y[i] = rng.bernoulli(0.4);
    y[0] = 0, y[1] = 1;
    worst = std::max(worst, std::abs(roc_auc(s, y) - oracle::pairwise_auc(s, y)));
  }
  o.require(worst < 1e-9, fmt::format("auc max err {:.2e}", worst));

  int hull_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const int w = 2 + static_cast<int>(rng.below(31)), h = 2 + static_cast<int>(rng.below(31));
    BitMask m(w, h);
    const int k = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < k; ++i) m.set(static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h)));
    hull_mismatch += convex_hull(m).bits != oracle::brute_hull(m.bits, w, h);
  }
  o.require(hull_mismatch == 0, fmt::format("hull mismatches {}/100", hull_mismatch));
  return o;
}

Outcome criterion2() {
  Outcome o;
  TrainConfig c;
  c.model.input_size = 16;
  c.model.channels = {6, 8, 12};
  c.max_epochs = 4;
  c.batch_size = 16;
  c.learning_rate = 0.02;
  c.seed = 11;
  const EnvironmentKey key{5, 0};
  const auto set = noise_images(96, 16, 2, key.code());
  const auto idx = iota_idx(set.count());
  const auto erm = train(set, idx, nullptr, c);

  EnvironmentPartition one;
  for (const auto& id : set.ids) one.members[key].push_back(id);
  auto dro_cfg = c;
  dro_cfg.method = Method::GroupDRO;
  dro_cfg.adjustment = 3.0;
  o.require(same_run(erm, train(set, idx, &one, dro_cfg)), "GroupDRO(one env) == ERM");

  auto rsc_cfg = c;
  rsc_cfg.method = Method::RSC;
  rsc_cfg.rsc_percentile = 0.0;
  o.require(same_run(erm, train(set, idx, nullptr, rsc_cfg)), "RSC(p=0) == ERM");
  rsc_cfg.rsc_percentile = 33.0;
  rsc_cfg.rsc_fraction = 0.0;
  o.require(same_run(erm, train(set, idx, nullptr, rsc_cfg)), "RSC(f=0) == ERM");

  SyntheticConfig sc;
  sc.image_size = 48;
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    const auto s = render_sample(sc, fmt::format("id{}", i));
    BitMask full(48, 48);
    std::fill(full.bits.begin(), full.bits.end(), 1);
    const auto r = noisecrop(s.image, full, {48, 0, 255, 3}, fmt::format("id{}", i));
    identical += cv::norm(r.image, s.image, cv::NORM_INF) == 0.0;
  }
  o.require(identical == 10, fmt::format("NoiseCrop(full mask) == identity on {}/10", identical));
  return o;
}

Outcome criterion3() {
  Outcome o;
  // Simplex invariant over real GroupDRO steps with many groups.
  std::vector<EnvironmentKey> keys;
  std::vector<std::size_t> sizes;
  for (int g = 0; g < 8; ++g) keys.push_back({static_cast<std::uint8_t>(g * 3), g % 2}), sizes.push_back(4 + 7 * g);
  GroupWeights w(keys, sizes, 0.5, 2.0);
  SmallCnnSpec spec;
  spec.input_size = 8;
  spec.channels = {4, 4, 8};
  SmallCnn model(spec, 1);
  Sgd opt({0.05, 0.9, 1e-3});
  Rng rng(4);
  double worst_sum = 0.0, min_q = 1.0;
  for (int step = 0; step < 300; ++step) {
    Batch b;
    b.images = Tensor4(12, 3, 8, 8);
    for (auto& v : b.images.data) v = static_cast<float>(rng.normal());
    for (int i = 0; i < 12; ++i) {
      const auto& k = keys[rng.below(keys.size())];
      b.labels.push_back(k.label);
      b.env_codes.push_back(k.code());
    }
    groupdro_step(model, opt, b, w);
    double sum = 0.0;
    for (double q : w.weights()) sum += q, min_q = std::min(min_q, q);
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  o.require(worst_sum < 1e-9 && min_q >= 0.0, fmt::format("simplex |sum-1| {:.1e}, min q {:.2e}", worst_sum, min_q));

  GroupWeights two({{0, 0}, {0, 1}}, {10, 10}, 1.0, 0.0);
  const std::vector<std::size_t> present{0, 1};
  const std::vector<double> losses{1.0, 0.0};
  two.update(present, losses);
  const double e = std::exp(1.0);
  const double err = std::max(std::abs(two.weights()[0] - e / (1 + e)), std::abs(two.weights()[1] - 1 / (1 + e)));
  o.require(err < 1e-12, fmt::format("closed form err {:.1e}", err));

  double adj_err = 0.0;
  for (int C = 0; C <= 5; ++C) {
    const std::vector<std::size_t> ns{1, 4, 25, 100, 1000};
    std::vector<EnvironmentKey> ks;
    for (std::size_t g = 0; g < ns.size(); ++g) ks.push_back({static_cast<std::uint8_t>(g), 0});
    GroupWeights gw(ks, ns, 0.01, C);
    for (std::size_t g = 0; g < ns.size(); ++g)
      adj_err = std::max(adj_err, std::abs(gw.adjustment_term(ks[g]) - C / std::sqrt(static_cast<double>(ns[g]))));
  }
  o.require(adj_err < 1e-12, fmt::format("adjustment C/sqrt(n) err {:.1e}", adj_err));
  return o;
}

Outcome criterion4() {
  Outcome o;
  // Targeted: dark_corner +0.5, ruler +0.5, ink -0.5; the rest uncorrelated.
  const std::vector<double> rho{0.5, 0.0, 0.0, 0.0, 0.5, -0.5, 0.0};
  const std::vector<double> marg{0.3, 0.2, 0.2, 0.2, 0.3, 0.3, 0.2};
  const std::array<std::size_t, 3> targeted{0, 4, 5};
  const std::vector<double> factors{0.0, 0.5, 1.0};
  std::vector<double> mean_j(factors.size(), 0.0);
  int flipped = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = testing::random_manifest(3000, rho, marg, 1000 + seed);
    for (std::size_t f = 0; f < factors.size(); ++f) {
      const auto split = build_trap_split(m, factors[f], 0.2, seed);
      mean_j[f] += split.objective / 10.0;
      if (factors[f] != 1.0) continue;
      for (auto a : targeted) {
        const auto tr = split.report.row("train").values[a], te = split.report.row("test").values[a];
        ++total;
        flipped += tr && te && (*tr) * (*te) < 0.0;
      }
    }
  }
  o.require(mean_j[0] < mean_j[1] && mean_j[1] < mean_j[2],
            fmt::format("mean J {:.3f} < {:.3f} < {:.3f}", mean_j[0], mean_j[1], mean_j[2]));
  o.require(flipped == total, fmt::format("sign flips at factor 1: {}/{}", flipped, total));
  return o;
}

Outcome criterion5() {
  Outcome o;
  testing::TempDir dir("acceptance-c5");
  SyntheticConfig sc;
  sc.n_samples = 5000;
  sc.image_size = 64;
  sc.lesion_strength = 0.7;
  sc.seed = 2024;
  const auto set_bias = [&](std::string_view name, double marginal, double corr) {
    sc.artifacts[static_cast<std::size_t>(artifact_index(name))] = {marginal, corr};
  };
  set_bias("dark_corner", 0.3, 0.5);
  set_bias("ruler", 0.3, 0.45);
  set_bias("ink", 0.2, 0.4);
  set_bias("gel_border", 0.3, -0.4);
  set_bias("patches", 0.2, -0.35);
  set_bias("hair", 0.2, 0.0);
  set_bias("gel_bubble", 0.2, 0.0);
  const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto m = generate_synthetic(sc, dir / "data", jobs);

  SweepConfig c;
  c.factors = {1.0};
  c.methods = {{Method::ERM, false}, {Method::GroupDRO, false}, {Method::ERM, true}, {Method::GroupDRO, true}};
  c.n_seeds = 5;
  c.tta_replicas = 5;
  c.train.max_epochs = 12;
  c.train.patience = 5;
  c.train.learning_rate = 0.01;
  c.noisecrop.output_size = 64;
  c.sweep_id = "c5";
  const auto r = run_trap_sweep(m, c, dir / "out", jobs);

  auto mean = [&](const char* name) {
    const auto* a = r.aggregate(1.0, name);
    return a && a->auc.n == 5 ? a->auc.mean : std::numeric_limits<double>::quiet_NaN();
  };
  const double erm = mean("ERM"), erm_nc = mean("ERM+NoiseCrop"), dro = mean("GroupDRO"),
               dro_nc = mean("GroupDRO+NoiseCrop");
  o.notes.push_back(fmt::format("AUC ERM {:.3f}, GroupDRO {:.3f}, ERM+NC {:.3f}, GroupDRO+NC {:.3f}", erm, dro, erm_nc,
                                dro_nc));
  o.require(erm <= erm_nc - 0.05, "ERM <= ERM+NoiseCrop - 0.05");
  o.require(erm <= dro_nc - 0.08, "ERM <= GroupDRO+NoiseCrop - 0.08");
  return o;
}

Outcome criterion6() {
  Outcome o;
  SyntheticConfig sc;
  sc.image_size = 96;
  sc.artifacts[0] = {0.4, 0.3};
  sc.artifacts[1] = {0.4, 0.0};
  sc.artifacts[4] = {0.4, -0.3};
  const NoiseCropConfig nc{128, 0, 255, 77};
  const double target_var = 5418.75;
  int checked = 0, stats_ok = 0;
  double min_corr = 1.0, worst_mean_dev = 0.0, worst_var_dev = 0.0;
  for (int i = 0; i < 60; ++i) {
    const auto id = fmt::format("c6_{:03d}", i);
    const auto s = render_sample(sc, id);
    const auto r = noisecrop(s.image, BitMask::from_mat(s.mask), nc, id);

    double sum = 0, sq = 0, n = 0;
    for (int y = 0; y < r.image.rows; ++y)
      for (int x = 0; x < r.image.cols; ++x) {
        if (r.lesion.at(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          const double v = r.image.at<cv::Vec3b>(y, x)[c];
          sum += v, sq += v * v, n += 1;
        }
      }
    if (n / 3 >= 1000) {
      ++checked;
      const double mean = sum / n, var = sq / n - mean * mean;
      worst_mean_dev = std::max(worst_mean_dev, std::abs(mean - 127.5));
      worst_var_dev = std::max(worst_var_dev, std::abs(var - target_var) / target_var);
      stats_ok += mean >= 117.5 && mean <= 137.5 && std::abs(var - target_var) <= 0.15 * target_var;
    }

    // Hull interior against an independent bilinear resize of the hull box.
    cv::Mat ref;
    cv::resize(s.image(r.box), ref, r.placed.size(), 0, 0, cv::INTER_LINEAR);
    std::vector<double> got, want;
    for (int y = 0; y < r.placed.height; ++y)
      for (int x = 0; x < r.placed.width; ++x) {
        if (!r.lesion.at(r.placed.x + x, r.placed.y + y)) continue;
        for (int c = 0; c < 3; ++c) {
          got.push_back(r.image.at<cv::Vec3b>(r.placed.y + y, r.placed.x + x)[c]);
          want.push_back(ref.at<cv::Vec3b>(y, x)[c]);
        }
      }
    min_corr = std::min(min_corr, testing::pearson(got, want));
  }
  o.require(checked > 0 && stats_ok == checked,
            fmt::format("noise stats ok on {}/{} images (max |mean-127.5| {:.2f}, max var dev {:.1f}%)", stats_ok,
                        checked, worst_mean_dev, 100 * worst_var_dev));
  o.require(min_corr > 0.99, fmt::format("min content correlation {:.4f}", min_corr));
  return o;
}

Outcome criterion7() {
  Outcome o;
  const auto sched = grid_schedule(ParamGrid::protocol(), TrainConfig{});
  std::set<std::tuple<double, double, int>> cells;
  for (const auto& s : sched) cells.insert({s.cell.learning_rate, s.cell.weight_decay, s.run});
  std::set<std::tuple<double, double, int>> expected;
  for (double lr : {1e-5, 1e-4, 1e-3})
    for (double wd : {1e-3, 1e-2, 1e-1, 1.0})
      for (int r : {0, 1}) expected.insert({lr, wd, r});
  o.require(sched.size() == 24 && cells == expected, fmt::format("protocol grid runs {}", sched.size()));

  TrainConfig c;
  c.model.input_size = 8;
  c.model.channels = {4, 4, 8};
  c.learning_rate = 0.0;  // validation AUC never improves after epoch 1
  c.batch_size = 32;
  const auto set = noise_images(64, 8, 3, 0);
  const auto run = train(set, iota_idx(64), nullptr, c);
  o.require(c.patience == 22 && run.epochs.size() == 23 && run.best_epoch == 1,
            fmt::format("flat run stopped after {} epochs (best {})", run.epochs.size(), run.best_epoch));

  SmallCnn m(c.model, 1);
  const auto p = predict_tta(m, set, iota_idx(4));
  o.require(p.tta_replicas == 50, fmt::format("default TTA replicas {}", p.tta_replicas));

  const auto protocol = SweepConfig::protocol();
  std::vector<SweepCell> cs;
  std::vector<double> values;
  Rng rng(5);
  for (int s = 0; s < protocol.n_seeds; ++s) {
    SweepCell cell;
    cell.factor = 1.0;
    cell.method = "ERM";
    cell.seed = s;
    cell.auc = rng.uniform(0.4, 0.8);
    values.push_back(*cell.auc);
    cs.push_back(cell);
  }
  const auto agg = aggregate_cells(cs, {1.0}, {"ERM"});
  double mu = 0, ss = 0;
  for (double v : values) mu += v;
  mu /= values.size();
  for (double v : values) ss += (v - mu) * (v - mu);
  const double se = std::sqrt(ss / (values.size() - 1)) / std::sqrt(static_cast<double>(values.size()));
  o.require(protocol.n_seeds == 10 && agg.size() == 1 && agg[0].auc.n == 10 && std::abs(agg[0].auc.stderr_ - se) < 1e-12,
            fmt::format("protocol preset: {} seeds, stderr over n={}", protocol.n_seeds, agg.empty() ? 0 : agg[0].auc.n));
  return o;
}

// Criterion 8 drives the CLI binary.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const int status = std::system(fmt::format("{} {} > /dev/null 2>&1", DEBIAS_LAB_BIN, args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Number of differing or missing files between two output trees.
int tree_diff(const fs::path& a, const fs::path& b, int& files) {
  int diff = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    diff += !fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel);
  }
  return diff;
}

Outcome criterion8() {
  Outcome o;
  testing::TempDir dir("acceptance-c8");
  const auto d = [&](const std::string& rel) { return (dir / rel).string(); };
  const std::string bias = "--bias dark_corner=0.3:0.5 --bias ruler=0.3:-0.45 --bias ink=0.25:0.4";
  std::ofstream(dir / "sweep.json") << fmt::format(
      R"({{"manifest": "{}", "factors": [0.0, 0.5, 1.0], "methods": ["ERM", "GroupDRO", "RSC", "ERM+NoiseCrop",
          "GroupDRO+NoiseCrop", "RSC+NoiseCrop"], "n_seeds": 2, "tta_replicas": 2, "sweep_id": "det",
          "train": {{"max_epochs": 2, "batch_size": 16}}, "noisecrop": {{"output_size": 32}}}})",
      d("A/data/manifest.csv"));

  // Each command runs under roots A and B (same seeds); --jobs differs where the
  // command is parallel.
  struct Step {
    std::string name, args, sub;
    int jobs_a, jobs_b;
  };
  const std::vector<Step> steps{
      {"synth", fmt::format("synth --n 240 --image-size 32 --seed 9 {}", bias), "data", 1, 3},
      {"audit", "audit --manifest {A}/data/manifest.csv", "audit", 1, 1},
      {"split", "split --manifest {A}/data/manifest.csv --factor 0.9 --seed 4", "split", 1, 1},
      {"envs", "envs --manifest {A}/data/manifest.csv --split {A}/split/split.json", "envs", 1, 1},
      {"train", "train --manifest {A}/data/manifest.csv --split {A}/split/split.json --method RSC --epochs 2 "
                "--batch-size 16 --seed 6",
       "train", 1, 1},
      {"noisecrop", "noisecrop --manifest {A}/data/manifest.csv --output-size 32", "nc", 1, 4},
      {"eval", "eval --model {A}/train/model.bin --manifest {A}/data/manifest.csv --split {A}/split/split.json "
               "--tta 3 --noisecrop --output-size 32",
       "eval", 1, 1},
      {"saliency", "saliency --model {A}/train/model.bin --manifest {A}/data/manifest.csv --limit 3", "sal", 1, 1},
      {"sweep", fmt::format("sweep --config {}", d("sweep.json")), "sweep", 1, 4},
      {"report", "report --sweep {A}/sweep/runs/det/sweep.json --split {A}/split/split.json "
                 "--eval {A}/eval/eval_report.json",
       "report", 1, 1},
  };
  int total_files = 0, total_diff = 0;
  for (const auto& s : steps) {
    std::string args = s.args;
    for (std::size_t p; (p = args.find("{A}")) != std::string::npos;) args.replace(p, 3, d("A"));
    const int ra = cli(fmt::format("{} --jobs {} --out {}", args, s.jobs_a, d("A/" + s.sub)));
    const int rb = cli(fmt::format("{} --jobs {} --out {}", args, s.jobs_b, d("B/" + s.sub)));
    int files = 0;
    const int diff = ra == 0 && rb == 0 ? tree_diff(dir / "A" / s.sub, dir / "B" / s.sub, files) : -1;
    total_files += files;
    total_diff += std::max(diff, 0);
    if (diff != 0)
      o.require(false, fmt::format("{}: exit {}/{}, {} differing files", s.name, ra, rb, diff));
  }
  o.require(total_diff == 0, fmt::format("{} commands, {} output files byte-identical across reruns", steps.size(),
                                         total_files));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"oracle equivalences", criterion1}},
      {2, {"reduction identities", criterion2}},
      {3, {"GroupDRO mechanics", criterion3}},
      {4, {"trap-set behavior", criterion4}},
      {5, {"end-to-end debiasing ordering", criterion5}},
      {6, {"NoiseCrop statistics", criterion6}},
      {7, {"protocol fidelity", criterion7}},
      {8, {"determinism and parallel safety", criterion8}},
  };
  // Runtime budgets in seconds; a criterion over budget fails.
  const std::map<int, double> budget{{1, 120}, {2, 300}, {4, 600}, {5, 1800}};

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, _] : criteria) selected.push_back(k);

  bool all = true;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      fmt::print("CRITERION {} FAIL: unknown criterion\n", k);
      all = false;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o.require(false, fmt::format("exception: {}", e.what()));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (auto b = budget.find(k); b != budget.end() && secs > b->second)
      o.require(false, fmt::format("runtime {:.0f}s over budget {:.0f}s", secs, b->second));
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    fmt::print("CRITERION {} {}: {} [{}] ({:.1f}s)\n", k, o.pass ? "PASS" : "FAIL", it->second.first, detail, secs);
    std::fflush(stdout);
    all &= o.pass;
  }
  return all ? 0 : 1;
}
