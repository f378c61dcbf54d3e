#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "nowcast/commands.hpp"
#include "nowcast/error.hpp"
#include "nowcast/model.hpp"
#include "nowcast/synthetic.hpp"
#include "oracles.hpp"

using nowcast::PreparedWindow;
using nowcast::Split;

TEST_CASE("regress: trivial, hand arithmetic, loop oracle, mismatch") {
  CHECK(nowcast::regress(0.0, std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 2.0}) ==
        0.0);
  CHECK(nowcast::regress(1.0, std::vector<double>{2.0, -1.0}, std::vector<double>{3.0, 4.0}) ==
        doctest::Approx(3.0).epsilon(1e-15));

  nowcast::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.index(6);
    std::vector<double> beta(k), z(k);
    for (std::size_t i = 0; i < k; ++i) {
      beta[i] = rng.uniform(-2.0, 2.0);
      z[i] = rng.uniform(-2.0, 2.0);
    }
    const double alpha = rng.uniform(-1.0, 1.0);
    double want = alpha;
    for (std::size_t i = 0; i < k; ++i) want += beta[i] * z[i];
    CHECK(std::abs(nowcast::regress(alpha, beta, z) - want) <= 1e-15);
  }

  CHECK_THROWS_AS(nowcast::regress(0.0, std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                  nowcast::DimensionError);
}

TEST_CASE("mse_loss: trivial and hand values, empty rejected") {
  const std::vector<double> y = {1.0, 2.0};
  CHECK(nowcast::mse_loss(y, y) == 0.0);
  CHECK(nowcast::mse_loss(y, std::vector<double>{0.0, 0.0}) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(nowcast::mse_loss({}, {}), nowcast::ConfigError);
  CHECK_THROWS_AS(nowcast::mse_loss(y, std::vector<double>{1.0}), nowcast::DimensionError);
}

TEST_CASE("adam: zero gradient leaves parameters, first step follows -sign(g)") {
  std::vector<double> params = {1.0, -2.0};
  nowcast::AdamState state;
  nowcast::adam_step(params, std::vector<double>{0.0, 0.0}, state, 0.1);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == -2.0);

  std::vector<double> p2 = {0.0, 0.0};
  nowcast::AdamState s2;
  nowcast::adam_step(p2, std::vector<double>{0.5, -3.0}, s2, 0.1);
  CHECK(p2[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p2[1] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam: 200 steps tame a 2-d quadratic") {
  // f(x) = 0.5 (x0-3)^2 + 2 (x1+1)^2
  std::vector<double> x = {0.0, 0.0};
  nowcast::AdamState state;
  auto loss = [](const std::vector<double>& v) {
    return 0.5 * (v[0] - 3.0) * (v[0] - 3.0) + 2.0 * (v[1] + 1.0) * (v[1] + 1.0);
  };
  const double start = loss(x);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> g = {x[0] - 3.0, 4.0 * (x[1] + 1.0)};
    nowcast::adam_step(x, g, state, 0.1);
  }
  CHECK(loss(x) < 1e-4 * start);
}

TEST_CASE("early stopping counter semantics on the fabricated sequence") {
  nowcast::EarlyStop stop{.patience = 5};
  const std::vector<double> losses = {3, 2, 2, 2, 2, 2, 2};
  std::size_t stopped_after = 0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    if (stop.update(losses[e])) {
      stopped_after = e + 1;
      break;
    }
  }
  CHECK(stopped_after == 7);
  CHECK(stop.best == 2.0);
}

TEST_CASE("evaluate_baseline: hand metrics and the MAPE guard") {
  auto window = [](double y_raw, double z0, Split split) {
    PreparedWindow w;
    w.split = split;
    w.target_month = 24240 + static_cast<int>(z0);  // arbitrary distinct months
    w.y_raw = y_raw;
    w.z = {z0};
    return w;
  };
  nowcast::OlsBaseline base;
  base.alpha = 0.0;
  base.beta = {1.0};

  std::vector<PreparedWindow> ws;
  ws.push_back(window(2.0, 1.0, Split::test));
  ws.push_back(window(4.0, 2.0, Split::test));
  const auto m = nowcast::evaluate_baseline(base, ws, Split::test);
  CHECK(m.mse == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(m.mape == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.n == 2);
  for (const auto& r : m.per_window)
    CHECK(std::abs(r.y_hat - (r.alpha + r.beta[0] * r.z[0])) <= 1e-12);

  ws.push_back(window(0.0, 3.0, Split::test));
  CHECK_THROWS_AS(nowcast::evaluate_baseline(base, ws, Split::test), nowcast::ConfigError);
}

TEST_CASE("nowcast CSV re-computation matches the reported metrics") {
  std::vector<nowcast::Nowcast> records;
  nowcast::Rng rng(8);
  for (int i = 0; i < 6; ++i) {
    nowcast::Nowcast r;
    r.target_month = 24000 + 3 * i;
    r.y_true = rng.uniform(0.5, 3.0);
    r.alpha = rng.uniform(-1.0, 1.0);
    r.beta = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    r.z = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    r.y_hat = nowcast::regress(r.alpha, r.beta, r.z);
    records.push_back(r);
  }
  double se = 0.0, ape = 0.0;
  for (const auto& r : records) {
    se += (r.y_true - r.y_hat) * (r.y_true - r.y_hat);
    ape += std::abs((r.y_true - r.y_hat) / r.y_true);
  }

  const auto dir = std::filesystem::temp_directory_path() / "nowcast_csv_test";
  std::filesystem::create_directories(dir);
  const std::string file = (dir / "nowcasts.csv").string();
  nowcast::write_nowcasts(records, file);

  // Naive re-computation from the emitted CSV.
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  CHECK(line == "target_date,y_true,y_hat,alpha,beta_1,beta_2,z_1,z_2");
  double se2 = 0.0, ape2 = 0.0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 8);
    const double y = std::stod(fields[1]);
    const double yh = std::stod(fields[2]);
    const double alpha = std::stod(fields[3]);
    const double b1 = std::stod(fields[4]), b2 = std::stod(fields[5]);
    const double z1 = std::stod(fields[6]), z2 = std::stod(fields[7]);
    CHECK(std::abs(yh - (alpha + b1 * z1 + b2 * z2)) <= 1e-12);
    se2 += (y - yh) * (y - yh);
    ape2 += std::abs((y - yh) / y);
    ++rows;
  }
  CHECK(rows == records.size());
  CHECK(se2 == se);  // lossless round-trip makes these bitwise equal
  CHECK(ape2 == ape);
  std::filesystem::remove_all(dir);
}

namespace {

nowcast::RunConfig tiny_run_config(std::uint64_t seed) {
  nowcast::SyntheticSpec spec;
  spec.k = 1;
  spec.d = 4;
  spec.t_months = 180;
  spec.seed = 77;
  spec.noise_obs = 0.4;
  spec.noise_state = 1.0;
  spec.a_diag = {0.8};
  spec.target_rule.alpha0 = 0.2;
  spec.target_rule.beta0 = {2.0};
  spec.target_rule.noise = 0.05;

  nowcast::RunConfig cfg;
  cfg.synthetic = spec;
  cfg.groups = {"g1"};
  cfg.dim_alpha = 6;
  cfg.dim_beta = 6;
  cfg.layers = 1;
  cfg.train.lr = 1e-2;
  cfg.train.max_epochs = 60;
  cfg.train.patience = 8;
  cfg.train.solver = nowcast::Solver::euler;
  cfg.train.steps_per_month = 2;
  cfg.train.seed = seed;
  cfg.out_dir = "";
  return cfg;
}

}  // namespace

TEST_CASE("training learns a linear factor target and respects lr=0") {
  nowcast::RunConfig cfg = tiny_run_config(5);
  const auto res = nowcast::run_pipeline(cfg);

  // lr = 0: parameters unchanged after any number of epochs.
  nowcast::RunConfig frozen = cfg;
  frozen.train.lr = 0.0;
  frozen.train.max_epochs = 3;
  nowcast::Rng init_rng(frozen.train.seed);
  nowcast::NcdeConfig arch;
  arch.input_dim = res.panel.cols();
  arch.dim_alpha = frozen.dim_alpha;
  arch.dim_beta = frozen.dim_beta;
  arch.layers = frozen.layers;
  arch.factors = 1;
  const nowcast::NcdeParams before = nowcast::NcdeParams::init(arch, init_rng);
  const auto frozen_res = nowcast::train(before, res.prepared, frozen.train);
  CHECK(frozen_res.params.flatten() == before.flatten());

  // Learnability: the trained model explains most of the target variance
  // on the training split.
  const auto& stats = res.panel.stats[res.panel.target_column()];
  const auto train_metrics =
      nowcast::evaluate(res.trained.params, res.prepared, Split::train, cfg.train, stats);
  double mean = 0.0, var = 0.0;
  std::size_t n = 0;
  for (const auto& w : res.prepared)
    if (w.split == Split::train) {
      mean += w.y_raw;
      ++n;
    }
  mean /= static_cast<double>(n);
  for (const auto& w : res.prepared)
    if (w.split == Split::train) var += (w.y_raw - mean) * (w.y_raw - mean);
  var /= static_cast<double>(n);
  CHECK(train_metrics.mse < 0.10 * var);

  // Early stopping never returns a validation loss worse than the best.
  double best_seen = std::numeric_limits<double>::infinity();
  for (const auto& e : res.trained.history) best_seen = std::min(best_seen, e.val_mse);
  CHECK(res.trained.best_val == best_seen);

  // Reconstruction identity on every emitted nowcast.
  for (const auto& r : res.test_metrics.per_window) {
    double s = r.alpha;
    for (std::size_t k = 0; k < r.beta.size(); ++k) s += r.beta[k] * r.z[k];
    CHECK(std::abs(r.y_hat - s) <= 1e-12);
  }
}

TEST_CASE("training is deterministic for a fixed config and seed") {
  nowcast::RunConfig cfg = tiny_run_config(11);
  cfg.train.max_epochs = 12;
  const auto a = nowcast::run_pipeline(cfg);
  const auto b = nowcast::run_pipeline(cfg);
  REQUIRE(a.trained.history.size() == b.trained.history.size());
  for (std::size_t i = 0; i < a.trained.history.size(); ++i) {
    CHECK(a.trained.history[i].train_mse == b.trained.history[i].train_mse);
    CHECK(a.trained.history[i].val_mse == b.trained.history[i].val_mse);
  }
  CHECK(a.test_metrics.mse == b.test_metrics.mse);
  CHECK(a.test_metrics.mape == b.test_metrics.mape);
  CHECK(a.trained.params.flatten() == b.trained.params.flatten());
}
