#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mrsn/errors.hpp"
#include "mrsn/harness.hpp"

using namespace mrsn;

namespace {

harness::ExperimentConfig small_config() {
  harness::ExperimentConfig cfg;
  cfg.domain = {};
  cfg.num_robots = 3;
  cfg.measurement_steps = 3;
  cfg.seed = 7;
  return cfg;
}

/// One full-size episode, computed once and shared across audits.
const harness::MetricsRecord& default_episode() {
  static const harness::MetricsRecord rec = [] {
    harness::ExperimentConfig cfg;
    cfg.domain = {};
    cfg.seed = 1;
    return harness::run_episode(cfg);
  }();
  return rec;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate_ground_truth: deterministic for a fixed seed") {
  auto cfg = small_config();
  auto a = harness::generate_ground_truth(42, cfg);
  auto b = harness::generate_ground_truth(42, cfg);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  auto c = harness::generate_ground_truth(43, cfg);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("generate_ground_truth: vanishing signal variance gives a constant field") {
  auto cfg = small_config();
  cfg.ground_truth.constant_mean = 19.5;
  cfg.ground_truth.signal_variance = 1e-14;
  auto field = harness::generate_ground_truth(3, cfg);
  CHECK((field.values.array() - 19.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("generate_ground_truth: too coarse a grid is rejected") {
  auto cfg = small_config();
  cfg.ground_truth.resolution = 5.0;  // 9x7 grid
  CHECK_THROWS_AS(harness::generate_ground_truth(1, cfg), InvalidArgument);
}

TEST_CASE("generate_ground_truth: CSV mode fits scattered readings") {
  auto cfg = small_config();
  auto field = harness::generate_ground_truth(11, cfg);

  // 54 noisy readings of the drawn field, then refit from the file.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0.0, 40.0), uy(0.0, 30.0);
  const double noise_sd = 0.05;
  gp::Dataset readings;
  for (int i = 0; i < 54; ++i) {
    Eigen::Vector2d s(ux(rng), uy(rng));
    readings.append(s, harness::measure(field, s, noise_sd, rng));
  }
  const std::string path = temp_path("mrsn_test_readings.csv");
  gp::save_dataset_csv(readings, path);

  auto csv_cfg = cfg;
  csv_cfg.ground_truth_csv = path;
  auto fitted = harness::generate_ground_truth(0, csv_cfg);
  double sq = 0.0;
  for (int i = 0; i < readings.size(); ++i)
    sq += std::pow(fitted.at(readings.locations.row(i)) - readings.measurements(i), 2);
  CHECK(std::sqrt(sq / readings.size()) < noise_sd);
  std::filesystem::remove(path);
}

TEST_CASE("generate_ground_truth: CSV with fewer than 3 points is rejected") {
  const std::string path = temp_path("mrsn_test_tiny.csv");
  {
    std::ofstream f(path);
    f << "x,y,value\n1.0,2.0,3.0\n4.0,5.0,6.0\n";
  }
  auto cfg = small_config();
  cfg.ground_truth_csv = path;
  CHECK_THROWS_AS(harness::generate_ground_truth(0, cfg), InvalidArgument);
  std::filesystem::remove(path);
}

TEST_CASE("measure: zero noise returns the interpolated field value") {
  auto cfg = small_config();
  auto field = harness::generate_ground_truth(2, cfg);
  std::mt19937_64 rng(0);
  Eigen::Vector2d s(17.3, 11.8);
  CHECK(harness::measure(field, s, 0.0, rng) == field.at(s));
}

TEST_CASE("measure: grid node query equals the stored node value") {
  auto cfg = small_config();
  auto field = harness::generate_ground_truth(2, cfg);
  CHECK(field.at({12.0, 7.0}) == field.values(7, 12));
  CHECK(field.at({0.0, 0.0}) == field.values(0, 0));
  CHECK(field.at({40.0, 30.0}) == field.values(30, 40));
}

TEST_CASE("measure: sample mean of many draws concentrates on the field value") {
  auto cfg = small_config();
  auto field = harness::generate_ground_truth(2, cfg);
  std::mt19937_64 rng(123);
  Eigen::Vector2d s(20.0, 15.0);
  const double noise_sd = 0.5;
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += harness::measure(field, s, noise_sd, rng);
  CHECK(std::abs(sum / n - field.at(s)) < 4.0 * noise_sd / 100.0);
}

TEST_CASE("measure: out-of-domain query throws") {
  auto cfg = small_config();
  auto field = harness::generate_ground_truth(2, cfg);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(harness::measure(field, {-1.0, 5.0}, 0.1, rng), InvalidArgument);
  CHECK_THROWS_AS(harness::measure(field, {5.0, 30.5}, 0.1, rng), InvalidArgument);
}

TEST_CASE("metrics: exact prediction gives zero errors") {
  gp::PosteriorStats pred;
  pred.mean = Eigen::VectorXd::LinSpaced(10, 0.0, 9.0);
  pred.covariance = 0.3 * Eigen::MatrixXd::Identity(10, 10);
  double alpv = 0.0, rmse = 0.0, mae = 0.0;
  harness::metrics(pred, pred.mean, alpv, rmse, mae);
  CHECK(rmse == 0.0);
  CHECK(mae == 0.0);
  CHECK(alpv == doctest::Approx(std::log(0.3)).epsilon(1e-12));
}

TEST_CASE("metrics: matches a direct two-pass recomputation") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  const int n = 40;
  gp::PosteriorStats pred;
  pred.mean = Eigen::VectorXd::Zero(n);
  pred.covariance = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd truth(n);
  for (int i = 0; i < n; ++i) {
    pred.mean(i) = 5.0 * u(rng);
    pred.covariance(i, i) = u(rng);
    truth(i) = 5.0 * u(rng);
  }
  double alpv = 0.0, rmse = 0.0, mae = 0.0;
  harness::metrics(pred, truth, alpv, rmse, mae);

  double alpv2 = 0.0, sq = 0.0, mx = 0.0;
  for (int i = 0; i < n; ++i) {
    alpv2 += std::log(pred.covariance(i, i));
    const double e = std::abs(pred.mean(i) - truth(i));
    sq += e * e;
    mx = std::max(mx, e);
  }
  alpv2 /= n;
  CHECK(std::abs(alpv - alpv2) < 1e-12);
  CHECK(std::abs(rmse - std::sqrt(sq / n)) < 1e-12);
  CHECK(std::abs(mae - mx) < 1e-12);
  CHECK(mae >= rmse / std::sqrt(double(n)));
}

TEST_CASE("metrics: size mismatch throws") {
  gp::PosteriorStats pred;
  pred.mean = Eigen::VectorXd::Zero(4);
  pred.covariance = Eigen::MatrixXd::Identity(4, 4);
  double a, r, m;
  CHECK_THROWS_AS(harness::metrics(pred, Eigen::VectorXd::Zero(5), a, r, m), InvalidArgument);
}

TEST_CASE("eval_grid: 1 m resolution covers the default domain") {
  geometry::Rect domain;
  auto grid = harness::eval_grid(domain, 1.0);
  CHECK(grid.rows() == 41 * 31);
  // x varies fastest
  CHECK(grid(0, 0) == 0.0);
  CHECK(grid(0, 1) == 0.0);
  CHECK(grid(1, 0) == 1.0);
  CHECK(grid(1, 1) == 0.0);
  CHECK(grid(grid.rows() - 1, 0) == 40.0);
  CHECK(grid(grid.rows() - 1, 1) == 30.0);
}

TEST_CASE("run_episode: zero measurement steps yields only the initial row") {
  auto cfg = small_config();
  cfg.measurement_steps = 0;
  auto rec = harness::run_episode(cfg);
  REQUIRE(rec.steps.size() == 1);
  CHECK(rec.steps[0].step == 0);
  CHECK(rec.steps[0].wall_ms == 0.0);
  CHECK(rec.positions.size() == 1);
  CHECK(rec.dataset.size() == 0);
  CHECK(rec.completed);
  // with no data the posterior is the prior: alpv = log prior variance
  harness::ExperimentConfig probe = cfg;
  CHECK(rec.steps[0].alpv ==
        doctest::Approx(std::log(probe.ground_truth.signal_variance)).epsilon(1e-12));
}

TEST_CASE("run_episode: dataset grows by one measurement per robot per step") {
  auto cfg = small_config();
  auto rec = harness::run_episode(cfg);
  CHECK(rec.completed);
  CHECK(rec.dataset.size() == cfg.num_robots * cfg.measurement_steps);
  CHECK(rec.steps.size() == static_cast<size_t>(cfg.measurement_steps) + 1);
  CHECK(rec.positions.size() == static_cast<size_t>(cfg.measurement_steps) + 1);
  // measurements are taken at the recorded measurement-step positions
  for (int step = 0; step < cfg.measurement_steps; ++step)
    for (int i = 0; i < cfg.num_robots; ++i) {
      const Eigen::Vector2d loc =
          rec.dataset.locations.row(step * cfg.num_robots + i).transpose();
      CHECK((loc - rec.positions[static_cast<size_t>(step)][static_cast<size_t>(i)]).norm() <
            1e-12);
    }
}

TEST_CASE("run_episode: identical config and seed reproduce the record exactly") {
  auto cfg = small_config();
  auto a = harness::run_episode(cfg);
  auto b = harness::run_episode(cfg);
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].alpv == b.steps[k].alpv);
    CHECK(a.steps[k].rmse == b.steps[k].rmse);
    CHECK(a.steps[k].mae == b.steps[k].mae);
  }
  REQUIRE(a.positions.size() == b.positions.size());
  for (size_t k = 0; k < a.positions.size(); ++k)
    for (size_t i = 0; i < a.positions[k].size(); ++i)
      CHECK((a.positions[k][i] - b.positions[k][i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.dataset.measurements - b.dataset.measurements).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("run_episode: default episode completes with a falling variance trace") {
  const auto& rec = default_episode();
  REQUIRE(rec.completed);
  REQUIRE(rec.steps.size() == 16);
  int falling = 0;
  for (size_t k = 1; k < rec.steps.size(); ++k)
    if (rec.steps[k].alpv < rec.steps[k - 1].alpv) ++falling;
  CHECK(falling >= 12);
}

TEST_CASE("run_episode: applied controls stay within bounds exactly") {
  const auto& rec = default_episode();
  harness::ExperimentConfig cfg;
  for (const auto& step : rec.applied_controls)
    for (const auto& agent : step)
      for (const auto& u : agent) {
        CHECK(u.v >= cfg.bounds.v_min);
        CHECK(u.v <= cfg.bounds.v_max);
        CHECK(u.omega >= cfg.bounds.omega_min);
        CHECK(u.omega <= cfg.bounds.omega_max);
      }
}

TEST_CASE("run_episode: pairwise separation at measurement steps") {
  const auto& rec = default_episode();
  harness::ExperimentConfig cfg;
  for (const auto& snapshot : rec.positions)
    for (size_t i = 0; i < snapshot.size(); ++i)
      for (size_t j = i + 1; j < snapshot.size(); ++j)
        CHECK((snapshot[i] - snapshot[j]).norm() >= 2.0 * cfg.safety_eps - 1e-6);
}

TEST_CASE("run_episode: robots never leave the domain") {
  const auto& rec = default_episode();
  harness::ExperimentConfig cfg;
  for (const auto& snapshot : rec.positions)
    for (const auto& p : snapshot) CHECK(cfg.domain.contains(p, 1e-9));
}

TEST_CASE("run_batch: a single run matches the lone record and fills quartiles") {
  auto cfg = small_config();
  auto report = harness::run_batch(cfg, 1);
  REQUIRE(report.runs.size() == 1);
  CHECK(report.failures == 0);
  const auto& last = report.runs[0].steps.back();
  for (double q : report.alpv_quartiles) CHECK(q == last.alpv);
  for (double q : report.rmse_quartiles) CHECK(q == last.rmse);
  for (double q : report.mae_quartiles) CHECK(q == last.mae);
}

TEST_CASE("run_batch: both methods consume identical poses and ground truth") {
  auto cfg = small_config();
  cfg.measurement_steps = 1;
  auto sc = harness::run_batch(cfg, 1);
  cfg.method = solvers::Method::ladmm;
  auto la = harness::run_batch(cfg, 1);
  const auto& da = sc.runs[0].dataset;
  const auto& db = la.runs[0].dataset;
  REQUIRE(da.size() == db.size());
  CHECK((da.locations - db.locations).cwiseAbs().maxCoeff() == 0.0);
  CHECK((da.measurements - db.measurements).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("write_metrics_csv: header and row count") {
  auto cfg = small_config();
  const std::string dir = temp_path("mrsn_test_out");
  std::filesystem::create_directories(dir);
  auto report = harness::run_batch(cfg, 2, dir);
  std::ifstream f(dir + "/metrics.csv");
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line == "run,step,alpv,rmse,mae,wall_ms");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2 * (cfg.measurement_steps + 1));
  CHECK(std::filesystem::exists(dir + "/trace_0.json"));
  CHECK(std::filesystem::exists(dir + "/field_0_0.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_config: parses fields and keeps defaults for missing keys") {
  const std::string path = temp_path("mrsn_test_cfg.json");
  {
    std::ofstream f(path);
    f << R"({"num_robots": 4, "measurement_steps": 7, "seed": 99,
            "method": "ladmm", "mode": "distributed",
            "admm": {"rho": 0.25, "sc": {"r_init": 0.5}},
            "ground_truth": {"length_scale": 12.0},
            "noise_sd": 0.3})";
  }
  auto cfg = harness::load_config(path);
  CHECK(cfg.num_robots == 4);
  CHECK(cfg.measurement_steps == 7);
  CHECK(cfg.seed == 99);
  CHECK(cfg.method == solvers::Method::ladmm);
  CHECK(cfg.mode == solvers::Mode::distributed);
  CHECK(cfg.admm.rho == 0.25);
  CHECK(cfg.admm.sc.r_init == 0.5);
  CHECK(cfg.ground_truth.length_scale == 12.0);
  CHECK(cfg.noise_sd == 0.3);
  // untouched defaults
  harness::ExperimentConfig def;
  CHECK(cfg.horizon == def.horizon);
  CHECK(cfg.dt == def.dt);
  CHECK(cfg.admm.k_max == def.admm.k_max);
  CHECK(cfg.admm.sc.lambda == def.admm.sc.lambda);
  std::filesystem::remove(path);
}

TEST_CASE("load_config: unknown method or missing file throws") {
  CHECK_THROWS_AS(harness::load_config(temp_path("mrsn_no_such_file.json")), InvalidArgument);
  const std::string path = temp_path("mrsn_bad_cfg.json");
  {
    std::ofstream f(path);
    f << R"({"method": "sgd"})";
  }
  CHECK_THROWS_AS(harness::load_config(path), InvalidArgument);
  std::filesystem::remove(path);
}
