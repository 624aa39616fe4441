#include <doctest.h>

#include <cmath>
#include <fmt/format.h>

#include <fstream>
#include <set>

#include "debias/errors.hpp"
#include "debias/model_io.hpp"
#include "debias/training.hpp"
#include "support.hpp"

using namespace debias;

namespace {

SmallCnnSpec tiny_spec() {
  SmallCnnSpec s;
  s.input_size = 8;
  s.channels = {3, 4, 6};
  return s;
}

Batch random_batch(int n, int size, std::uint64_t seed, std::vector<int> envs = {}) {
  Rng rng(seed);
  Batch b;
  b.images = Tensor4(n, 3, size, size);
  for (auto& v : b.images.data) v = static_cast<float>(rng.normal());
  for (int i = 0; i < n; ++i) b.labels.push_back(i % 2);
  b.env_codes = envs.empty() ? std::vector<int>(n, 0) : envs;
  return b;
}

std::vector<std::vector<float>> params_of(Classifier& m) { return snapshot_parameters(m); }

/// Synthetic ImageSet: class 1 has a bright centre square, class 0 a dark one.
ImageSet separable_set(int n, int size, std::uint64_t seed, int env_code = 0) {
  ImageSet s;
  s.size = size;
  s.channels = 3;
  s.pixels.resize(static_cast<std::size_t>(n) * s.sample_size());
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    s.ids.push_back(fmt::format("img{:04d}", i));
    s.labels.push_back(y);
    s.env_codes.push_back(env_code);
    float* px = s.sample(static_cast<std::size_t>(i));
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < size; ++r)
        for (int q = 0; q < size; ++q) {
          const bool centre = r >= size / 4 && r < 3 * size / 4 && q >= size / 4 && q < 3 * size / 4;
          const double base = centre ? (y ? 1.5 : -1.5) : 0.0;
          px[(c * size + r) * size + q] = static_cast<float>(base + 0.3 * rng.normal());
        }
  }
  return s;
}

std::vector<std::size_t> iota_idx(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("sgd on a one-parameter quadratic matches the analytic step") {
  // loss = (w - 3)^2, grad = 2 (w - 3)
  std::vector<float> w{1.0f}, g{0.0f};
  std::vector<ParamView> p{{"w", w, g}};
  Sgd opt({0.1, 0.0, 0.0});
  g[0] = 2.0f * (w[0] - 3.0f);
  opt.step(p);
  CHECK(w[0] == doctest::Approx(1.0 - 0.1 * -4.0));

  // Momentum and coupled weight decay, two steps by hand.
  std::vector<float> w2{2.0f}, g2{0.0f};
  std::vector<ParamView> p2{{"w", w2, g2}};
  Sgd mom({0.1, 0.9, 0.5});
  double wr = 2.0, v = 0.0;
  for (int t = 0; t < 2; ++t) {
    g2[0] = 2.0f * (w2[0] - 3.0f);
    const double gr = 2.0 * (wr - 3.0) + 0.5 * wr;
    v = 0.9 * v + gr;
    wr -= 0.1 * v;
    mom.step(p2);
  }
  CHECK(w2[0] == doctest::Approx(wr).epsilon(1e-6));
}

TEST_CASE("masked head with all-ones mask equals plain head exactly") {
  SmallCnn m(tiny_spec(), 3);
  const auto b = random_batch(5, 8, 1);
  const Matrix z = m.extract(b.images);
  const Matrix a = m.head(z), c = m.masked_head(z, Matrix::Ones(z.rows(), z.cols()));
  CHECK((a.array() == c.array()).all());
}

TEST_CASE("true-class score gradient matches central differences") {
  for (int model_kind = 0; model_kind < 2; ++model_kind) {
    std::unique_ptr<Classifier> m;
    if (model_kind == 0)
      m = std::make_unique<testing::LinearProbe>(3, 4, 10, 7);
    else
      m = std::make_unique<SmallCnn>(tiny_spec(), 7);
    const auto b = random_batch(4, m->input_size(), 2);
    const Matrix z = m->extract(b.images);
    const Matrix g = m->true_class_score_gradient(z, b.labels);
    const double eps = 1e-2;
    double worst = 0;
    for (int i = 0; i < z.rows(); ++i)
      for (int k = 0; k < z.cols(); ++k) {
        Matrix zp = z, zm = z;
        zp(i, k) += static_cast<float>(eps);
        zm(i, k) -= static_cast<float>(eps);
        const int y = b.labels[i];
        const double fd = (static_cast<double>(m->head(zp)(i, y)) - m->head(zm)(i, y)) /
                          (static_cast<double>(zp(i, k)) - zm(i, k));
        worst = std::max(worst, std::abs(fd - g(i, k)) / std::max(1e-3, std::abs(fd)));
      }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("backpropagation matches finite differences of the loss") {
  SmallCnn m(tiny_spec(), 11);
  const auto b = random_batch(3, 8, 4);
  auto loss_of = [&]() {
    const auto l = cross_entropy(m.logits(b.images), b.labels);
    double s = 0;
    for (double v : l) s += v;
    return s / l.size();
  };
  const Matrix z = m.extract(b.images);
  const Matrix logits = m.head(z);
  Matrix d(logits.rows(), 2);
  for (int i = 0; i < logits.rows(); ++i) {
    const double p1 = 1.0 / (1.0 + std::exp(static_cast<double>(logits(i, 0)) - logits(i, 1)));
    d(i, 0) = static_cast<float>(((1 - p1) - (b.labels[i] == 0)) / logits.rows());
    d(i, 1) = static_cast<float>((p1 - (b.labels[i] == 1)) / logits.rows());
  }
  m.zero_grad();
  m.backward(z, d);
  auto params = m.parameters();
  int checked = 0, agree = 0;
  for (auto& p : params) {
    for (std::size_t k = 0; k < p.value.size(); k += std::max<std::size_t>(1, p.value.size() / 12)) {
      const float orig = p.value[k];
      const float h = 1e-2f;
      p.value[k] = orig + h;
      const double up = loss_of();
      p.value[k] = orig - h;
      const double dn = loss_of();
      p.value[k] = orig;
      const double fd = (up - dn) / (2.0 * h);
      ++checked;
      // ReLU/max-pool kinks can spoil individual differences; most must agree.
      agree += std::abs(fd - p.grad[k]) <= 2e-3 + 2e-2 * std::abs(fd);
    }
  }
  CHECK(checked > 30);
  CHECK(agree >= checked * 9 / 10);
}

TEST_CASE("erm_step basics") {
  SUBCASE("zero learning rate leaves parameters unchanged") {
    SmallCnn m(tiny_spec(), 1);
    const auto before = params_of(m);
    Sgd opt({0.0, 0.9, 0.1});
    erm_step(m, opt, random_batch(6, 8, 3));
    CHECK(params_of(m) == before);
  }
  SUBCASE("duplicated batch gives the same mean loss") {
    SmallCnn a(tiny_spec(), 1), c(tiny_spec(), 1);
    Sgd oa({0.01, 0.9, 0}), oc({0.01, 0.9, 0});
    const auto b = random_batch(4, 8, 5);
    Batch d = b;
    d.images = Tensor4(8, 3, 8, 8);
    std::copy(b.images.data.begin(), b.images.data.end(), d.images.data.begin());
    std::copy(b.images.data.begin(), b.images.data.end(), d.images.data.begin() + b.images.data.size());
    d.labels.insert(d.labels.end(), b.labels.begin(), b.labels.end());
    d.env_codes.insert(d.env_codes.end(), b.env_codes.begin(), b.env_codes.end());
    CHECK(erm_step(a, oa, b).loss == doctest::Approx(erm_step(c, oc, d).loss).epsilon(1e-12));
  }
  SUBCASE("empty batch is rejected") {
    SmallCnn m(tiny_spec(), 1);
    Sgd opt({0.01, 0.9, 0});
    Batch empty;
    CHECK_THROWS_AS(erm_step(m, opt, empty), ValidationError);
  }
  SUBCASE("non-finite loss aborts") {
    SmallCnn m(tiny_spec(), 1);
    Sgd opt({0.01, 0.9, 0});
    for (auto& p : m.parameters())
      if (p.name == "head.bias") p.value[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(erm_step(m, opt, random_batch(2, 8, 5)), NumericalError);
  }
}

TEST_CASE("GroupDRO closed-form q update") {
  const std::vector<EnvironmentKey> keys{{0, 0}, {0, 1}};
  GroupWeights w(keys, {10, 10}, 1.0, 0.0);
  const std::vector<std::size_t> present{0, 1};
  const std::vector<double> losses{1.0, 0.0};
  w.update(present, losses);
  const double e = std::exp(1.0);
  CHECK(w.weights()[0] == doctest::Approx(e / (1 + e)).epsilon(1e-12));
  CHECK(w.weights()[1] == doctest::Approx(1 / (1 + e)).epsilon(1e-12));
}

TEST_CASE("GroupDRO adjustment terms are C / sqrt(n_g)") {
  const std::vector<EnvironmentKey> keys{{1, 0}, {2, 1}};
  GroupWeights w(keys, {100, 25}, 0.01, 2.0);
  CHECK(w.adjustment_term(keys[0]) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(w.adjustment_term(keys[1]) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(w.index(EnvironmentKey{3, 0}), IntegrityError);
}

TEST_CASE("GroupDRO weights stay on the simplex; absent groups keep their weight") {
  std::vector<EnvironmentKey> keys;
  std::vector<std::size_t> sizes;
  for (int g = 0; g < 6; ++g) keys.push_back({static_cast<std::uint8_t>(g), g % 2}), sizes.push_back(5 + g);
  GroupWeights w(keys, sizes, 0.5, 1.0);
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    std::vector<std::size_t> present;
    std::vector<double> losses;
    for (std::size_t g = 0; g < keys.size(); ++g)
      if (rng.bernoulli(0.5)) present.push_back(g), losses.push_back(rng.uniform(0, 3));
    const auto before = w.weights();
    w.update(present, losses);
    double sum = 0;
    for (double q : w.weights()) {
      CHECK(q >= 0.0);
      sum += q;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    if (present.empty())
      for (std::size_t g = 0; g < keys.size(); ++g) CHECK(w.weights()[g] == doctest::Approx(before[g]).epsilon(1e-12));
  }
}

TEST_CASE("GroupDRO q of a persistently worse group never decreases") {
  GroupWeights w({{0, 0}, {0, 1}}, {10, 10}, 0.1, 0.0);
  const std::vector<std::size_t> present{0, 1};
  Rng rng(5);
  double prev = w.weights()[0];
  for (int t = 0; t < 200; ++t) {
    const double l1 = rng.uniform(0, 1);
    const std::vector<double> losses{l1 + rng.uniform(0.01, 1.0), l1};
    w.update(present, losses);
    CHECK(w.weights()[0] >= prev);
    prev = w.weights()[0];
  }
}

TEST_CASE("groupdro_step with one environment reproduces erm_step bit for bit") {
  SmallCnn a(tiny_spec(), 9), b(tiny_spec(), 9);
  Sgd oa({0.05, 0.9, 1e-3}), ob({0.05, 0.9, 1e-3});
  GroupWeights w({{0, 0}}, {100}, 0.01, 3.0);
  for (int t = 0; t < 5; ++t) {
    const auto batch = random_batch(6, 8, 100 + t);
    const double la = erm_step(a, oa, batch).loss;
    const double lb = groupdro_step(b, ob, batch, w).loss;
    CHECK(la == lb);
  }
  CHECK(params_of(a) == params_of(b));
}

TEST_CASE("frozen uniform GroupDRO equals ERM on a group-balanced batch") {
  SmallCnn a(tiny_spec(), 4), b(tiny_spec(), 4);
  Sgd oa({0.05, 0.0, 0.0}), ob({0.05, 0.0, 0.0});
  GroupWeights w({{0, 0}, {0, 1}}, {50, 50}, 0.0, 0.0);
  auto batch = random_batch(8, 8, 7);
  batch.env_codes.clear();
  for (int y : batch.labels) batch.env_codes.push_back(EnvironmentKey{0, y}.code());
  const double la = erm_step(a, oa, batch).loss;
  const double lb = groupdro_step(b, ob, batch, w).loss;
  CHECK(la == doctest::Approx(lb).epsilon(1e-12));
  const auto pa = params_of(a), pb = params_of(b);
  for (std::size_t t = 0; t < pa.size(); ++t)
    for (std::size_t k = 0; k < pa[t].size(); ++k) CHECK(pa[t][k] == doctest::Approx(pb[t][k]).epsilon(1e-5));
}

TEST_CASE("groupdro_step rejects unknown environments") {
  SmallCnn m(tiny_spec(), 1);
  Sgd opt({0.01, 0.9, 0});
  GroupWeights w({{0, 0}}, {10}, 0.01, 0);
  auto batch = random_batch(2, 8, 1, {0, 5});
  CHECK_THROWS_AS(groupdro_step(m, opt, batch, w), IntegrityError);
}

TEST_CASE("RSC drop count and top-k selection") {
  CHECK(rsc_drop_count(30, 10) == 3);
  CHECK(rsc_drop_count(33, 64) == 22);
  CHECK(rsc_drop_count(0, 64) == 0);
  CHECK_THROWS_AS(rsc_drop_count(100, 10), ConfigError);
  CHECK_THROWS_AS(rsc_drop_count(-1, 10), ConfigError);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> g(10);
    for (auto& v : g) v = static_cast<float>(rng.range(-3, 3));  // many ties
    const auto top = top_k_indices(g, 3);
    // Brute force: every unordered triple, pick the max-sum set with the
    // lexicographically smallest indices among equal sums.
    std::vector<int> best;
    double best_sum = -1e9;
    for (int a = 0; a < 10; ++a)
      for (int b = a + 1; b < 10; ++b)
        for (int c = b + 1; c < 10; ++c) {
          const double s = g[a] + g[b] + g[c];
          if (s > best_sum) best_sum = s, best = {a, b, c};
        }
    std::vector<int> sorted = top;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0;
    for (int i : top) sum += g[i];
    CHECK(sum == best_sum);
    CHECK(sorted == best);
  }
}

TEST_CASE("rsc_step mutes exactly ceil(p d / 100) top-gradient entries of treated samples") {
  testing::LinearProbe m(3, 4, 10, 3);
  Sgd opt({0.01, 0.9, 0});
  Rng rng(4);
  const auto batch = random_batch(8, 4, 9);
  const Matrix z = m.extract(batch.images);
  const Matrix g = m.true_class_score_gradient(z, batch.labels);
  const auto r = rsc_step(m, opt, batch, {30.0, 0.5}, rng);
  CHECK(r.treated.size() == 4);
  for (int i = 0; i < 8; ++i) {
    const bool treated = std::find(r.treated.begin(), r.treated.end(), i) != r.treated.end();
    int zeros = 0;
    for (int k = 0; k < 10; ++k) zeros += r.mask(i, k) == 0.0f;
    CHECK(zeros == (treated ? 3 : 0));
    if (treated) {
      std::span<const float> row(g.row(i).data(), 10);
      for (int k : top_k_indices(row, 3)) CHECK(r.mask(i, k) == 0.0f);
    }
  }
}

TEST_CASE("rsc_step with p=0 or f=0 reproduces erm_step bit for bit") {
  for (const RscParams params : {RscParams{0.0, 0.5}, RscParams{33.0, 0.0}}) {
    SmallCnn a(tiny_spec(), 12), b(tiny_spec(), 12);
    Sgd oa({0.05, 0.9, 1e-3}), ob({0.05, 0.9, 1e-3});
    Rng rng(1);
    for (int t = 0; t < 4; ++t) {
      const auto batch = random_batch(6, 8, 200 + t);
      CHECK(erm_step(a, oa, batch).loss == rsc_step(b, ob, batch, params, rng).loss);
    }
    CHECK(params_of(a) == params_of(b));
  }
  SmallCnn m(tiny_spec(), 1);
  Sgd opt({0.01, 0.9, 0});
  Rng rng(1);
  CHECK_THROWS_AS(rsc_step(m, opt, random_batch(2, 8, 1), {100.0, 0.5}, rng), ConfigError);
  CHECK_THROWS_AS(rsc_step(m, opt, random_batch(2, 8, 1), {10.0, 1.5}, rng), ConfigError);
}

TEST_CASE("early stopping contract") {
  EarlyStopper s(22);
  int stopped = 0;
  for (int e = 1; e <= 100; ++e)
    if (s.update(e, 0.5)) {
      stopped = e;
      break;
    }
  CHECK(stopped == 23);
  CHECK(s.best_epoch() == 1);

  EarlyStopper t(2);
  CHECK_FALSE(t.update(1, 0.5));
  CHECK_FALSE(t.update(2, 0.6));
  CHECK_FALSE(t.update(3, 0.6));  // equal is not an improvement
  CHECK(t.update(4, 0.55));
  CHECK(t.best_epoch() == 2);
}

TEST_CASE("train config defaults, validation and json") {
  TrainConfig c;
  CHECK(c.max_epochs == 100);
  CHECK(c.patience == 22);
  CHECK(c.momentum == 0.9);
  CHECK(c.batch_size == 32);
  CHECK(c.rsc_percentile == 33.0);
  CHECK(c.rsc_fraction == 0.5);
  CHECK(c.eta_q == 0.01);
  const nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
  CHECK(c.hash() == j.get<TrainConfig>().hash());
  TrainConfig bad = c;
  bad.adjustment = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.rsc_percentile = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(method_from_string("GroupDRO") == Method::GroupDRO);
  CHECK_THROWS_AS(method_from_string("SGD"), ConfigError);
}

TEST_CASE("validation carve is stratified, disjoint and seeded") {
  const auto set = separable_set(101, 8, 1);
  const auto idx = iota_idx(101);
  const auto [fit, val] = carve_validation(set, idx, 0.2, 3);
  CHECK(fit.size() + val.size() == 101);
  std::set<std::size_t> f(fit.begin(), fit.end());
  for (auto v : val) CHECK(f.count(v) == 0);
  int pos = 0;
  for (auto v : val) pos += set.labels[v];
  CHECK(std::abs(pos - static_cast<int>(val.size()) / 2) <= 1);
  CHECK(carve_validation(set, idx, 0.2, 3).second == val);
  CHECK(carve_validation(set, idx, 0.2, 4).second != val);
}

TEST_CASE("ERM fits a separable set") {
  const auto set = separable_set(200, 16, 2);
  TrainConfig c;
  c.model.input_size = 16;
  c.model.channels = {8, 8, 16};
  c.learning_rate = 0.05;
  c.weight_decay = 0.0;
  c.max_epochs = 30;
  c.patience = 30;
  c.augmentation = AugmentRecipe::identity();
  const auto run = train(set, iota_idx(200), nullptr, c);
  double best = 1e9;
  for (const auto& e : run.epochs) best = std::min(best, e.train_loss);
  CHECK(best < 0.1);
  CHECK(run.best_val_auc > 0.99);
  CHECK_FALSE(run.read_test_labels);
}

TEST_CASE("training stops 22 epochs after a flat validation curve peaks") {
  const auto set = separable_set(60, 8, 3);
  TrainConfig c;
  c.model = tiny_spec();
  c.learning_rate = 0.0;
  c.batch_size = 16;
  const auto run = train(set, iota_idx(60), nullptr, c);
  CHECK(run.epochs.size() == 23);
  CHECK(run.best_epoch == 1);
}

TEST_CASE("training is deterministic and persists metrics") {
  testing::TempDir dir("train");
  const auto set = separable_set(80, 8, 4);
  TrainConfig c;
  c.model = tiny_spec();
  c.max_epochs = 4;
  c.batch_size = 16;
  c.seed = 17;
  c.method = Method::RSC;
  const auto a = train(set, iota_idx(80), nullptr, c, {dir / "m.jsonl", {}});
  const auto b = train(set, iota_idx(80), nullptr, c);
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].val_auc == b.epochs[e].val_auc);
  }
  std::ifstream in(dir / "m.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("val_auc"));
    CHECK(j.contains("group_losses"));
    ++lines;
  }
  CHECK(lines == static_cast<int>(a.epochs.size()));
}

TEST_CASE("GroupDRO training with one environment reproduces ERM training") {
  const auto set = separable_set(64, 8, 5, EnvironmentKey{3, 0}.code());
  TrainConfig c;
  c.model = tiny_spec();
  c.max_epochs = 3;
  c.batch_size = 16;
  c.adjustment = 2.0;
  EnvironmentPartition envs;
  for (const auto& id : set.ids) envs.members[{3, 0}].push_back(id);
  const auto erm = train(set, iota_idx(64), nullptr, c);
  c.method = Method::GroupDRO;
  const auto dro = train(set, iota_idx(64), &envs, c);
  REQUIRE(erm.epochs.size() == dro.epochs.size());
  for (std::size_t e = 0; e < erm.epochs.size(); ++e) CHECK(erm.epochs[e].train_loss == dro.epochs[e].train_loss);
  CHECK(snapshot_parameters(*erm.model) == snapshot_parameters(*dro.model));
  CHECK_THROWS_AS(train(set, iota_idx(64), nullptr, c), ValidationError);
}

TEST_CASE("validation without both classes is rejected") {
  auto set = separable_set(20, 8, 6);
  for (auto& y : set.labels) y = 1;
  TrainConfig c;
  c.model = tiny_spec();
  CHECK_THROWS_AS(train(set, iota_idx(20), nullptr, c), ValidationError);
}

TEST_CASE("grid search protocol") {
  const auto protocol = ParamGrid::protocol();
  CHECK(protocol.learning_rates == std::vector<double>{1e-5, 1e-4, 1e-3});
  CHECK(protocol.weight_decays == std::vector<double>{1e-3, 1e-2, 1e-1, 1.0});
  CHECK(protocol.adjustments == std::vector<double>{0, 1, 2, 3, 4, 5});
  CHECK(protocol.n_runs == 2);
  TrainConfig base;
  const auto sched = grid_schedule(protocol, base);
  CHECK(sched.size() == 24);
  std::set<std::tuple<double, double, int>> cells;
  std::set<std::uint64_t> seeds;
  for (const auto& r : sched) cells.insert({r.cell.learning_rate, r.cell.weight_decay, r.run}), seeds.insert(r.seed);
  CHECK(cells.size() == 24);
  CHECK(seeds.size() == 2);

  std::vector<LeaderboardRow> rows{{{1e-3, 1e-2, 0}, 0.7, {}},
                                   {{1e-4, 1e-1, 0}, 0.7, {}},
                                   {{1e-4, 1e-2, 0}, 0.7, {}},
                                   {{1e-5, 1e-3, 0}, 0.9, {}}};
  sort_leaderboard(rows);
  CHECK(rows[0].cell.learning_rate == 1e-5);
  CHECK(rows[1].cell.learning_rate == 1e-4);
  CHECK(rows[1].cell.weight_decay == 1e-2);
  CHECK(rows[2].cell.weight_decay == 1e-1);
  CHECK(rows[3].cell.learning_rate == 1e-3);
}

TEST_CASE("grid of one cell returns that cell") {
  const auto set = separable_set(60, 8, 7);
  ParamGrid g{{0.02}, {1e-3}, {}, 2};
  TrainConfig c;
  c.model = tiny_spec();
  c.max_epochs = 2;
  c.batch_size = 16;
  const auto r = grid_search(set, iota_idx(60), nullptr, g, c);
  CHECK(r.best.learning_rate == 0.02);
  CHECK(r.best.weight_decay == 1e-3);
  REQUIRE(r.leaderboard.size() == 1);
  CHECK(r.leaderboard[0].scores.size() == 2);
  CHECK_FALSE(r.privileged);
  CHECK_THROWS_AS(grid_search(set, iota_idx(60), nullptr, ParamGrid{{}, {1e-3}, {}, 2}, c), ConfigError);
}

TEST_CASE("privileged selection is flagged") {
  const auto set = separable_set(80, 8, 8);
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < 80; ++i) (i < 60 ? tr : te).push_back(i);
  ParamGrid g{{0.01, 0.02}, {1e-3}, {}, 1};
  TrainConfig c;
  c.model = tiny_spec();
  c.max_epochs = 1;
  c.batch_size = 16;
  const auto r = grid_search(set, tr, nullptr, g, c, Selection::PrivilegedTest, te);
  CHECK(r.privileged);
  CHECK(r.best.privileged);
}

TEST_CASE("model container round trip") {
  testing::TempDir dir("model");
  SmallCnn m(tiny_spec(), 21);
  TrainConfig c;
  c.model = tiny_spec();
  save_model(dir / "m.bin", m, nlohmann::json(c));
  const auto loaded = load_model(dir / "m.bin");
  CHECK(snapshot_parameters(*loaded.model) == snapshot_parameters(m));
  CHECK(loaded.config == nlohmann::json(c));
  const auto b = random_batch(3, 8, 1);
  CHECK(loaded.model->predict_proba(b.images) == m.predict_proba(b.images));

  // Flip a byte inside the config JSON: the embedded hash no longer matches.
  std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8 + 4 + 8 + 4 + 2);
  f.put('#');
  f.close();
  CHECK_THROWS(load_model(dir / "m.bin"));
  CHECK_THROWS_AS(load_model(dir / "absent.bin"), IoError);
}

TEST_CASE("augmentation") {
  Rng rng(1);
  std::vector<float> src(3 * 6 * 6), dst(src.size());
  for (auto& v : src) v = static_cast<float>(rng.normal());
  SUBCASE("identity copies without consuming randomness") {
    Rng a(5), b(5);
    augment_image(src.data(), dst.data(), 3, 6, AugmentRecipe::identity(), a);
    CHECK(dst == src);
    CHECK(a.next() == b.next());
  }
  SUBCASE("pure dihedral transforms permute pixels") {
    AugmentRecipe r{true, 0.0, true, 0.0, 0.0};
    for (int t = 0; t < 20; ++t) {
      augment_image(src.data(), dst.data(), 3, 6, r, rng);
      auto a = src, b = dst;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      // Contrast about the mean with unit gain may round in the last bit.
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-5));
    }
  }
  SUBCASE("json round trip") {
    AugmentRecipe r{true, 0.1, false, 0.2, 0.05};
    const nlohmann::json j = r;
    CHECK(nlohmann::json(j.get<AugmentRecipe>()) == j);
  }
}
