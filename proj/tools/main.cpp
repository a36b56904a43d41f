// Command-line front end: batch experiment runner plus the numerical check
// suites (gradient, GP posterior, QP solver) used to validate the library.

#include <cstdio>
#include <filesystem>
#include <random>

#include <CLI11.hpp>

#include "mrsn/errors.hpp"
#include "mrsn/harness.hpp"
#include "mrsn/oracles.hpp"

namespace {

using namespace mrsn;

int run_gradcheck() {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ux(0.0, 40.0), uy(0.0, 30.0), uval(-2.0, 2.0);
  double worst = 0.0;
  int checked = 0;
  for (int m : {2, 5}) {
    for (int n : {5, 20}) {
      for (int rep = 0; rep < 5; ++rep) {
        gp::Hyperparams h;
        h.constant_mean = 1.0;
        h.signal_variance = 2.0;
        h.length_scale = 5.0;
        h.noise_variance = 0.01;
        gp::Dataset data;
        for (int i = 0; i < n; ++i) data.append({ux(rng), uy(rng)}, uval(rng));
        Eigen::MatrixX2d s(m, 2);
        for (int i = 0; i < m; ++i) s.row(i) << ux(rng), uy(rng);

        Eigen::VectorXd analytic = gp::grad_neg_log_det(data, h, s);
        auto f = [&](const Eigen::VectorXd& v) {
          Eigen::MatrixX2d q(m, 2);
          for (int i = 0; i < m; ++i) q.row(i) = v.segment<2>(2 * i).transpose();
          return gp::neg_log_det(data, h, q);
        };
        Eigen::VectorXd flat(2 * m);
        for (int i = 0; i < m; ++i) flat.segment<2>(2 * i) = s.row(i).transpose();
        Eigen::VectorXd fd = oracles::finite_difference_gradient(f, flat, 1e-5);
        const double rel = (analytic - fd).norm() / std::max(fd.norm(), 1e-12);
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  std::printf("gradcheck: %d instances, worst relative error %.3e (tolerance 1e-5)\n", checked,
              worst);
  return worst < 1e-5 ? 0 : 1;
}

int run_gpcheck() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 2 + static_cast<int>(u01(rng) * 6);
    const int m = 1 + static_cast<int>(u01(rng) * 4);
    gp::Hyperparams h;
    h.constant_mean = 2.0 * u01(rng) - 1.0;
    h.signal_variance = 0.5 + 2.0 * u01(rng);
    h.length_scale = 1.0 + 4.0 * u01(rng);
    h.noise_variance = 0.01 + 0.1 * u01(rng);
    gp::Dataset data;
    for (int i = 0; i < n; ++i)
      data.append({10.0 * u01(rng), 10.0 * u01(rng)}, 4.0 * u01(rng) - 2.0);
    Eigen::MatrixX2d q(m, 2);
    for (int i = 0; i < m; ++i) q.row(i) << 10.0 * u01(rng), 10.0 * u01(rng);

    gp::PosteriorStats got = gp::predict(data, h, q);
    gp::PosteriorStats want = oracles::dense_posterior(data, h, q);
    worst = std::max(worst, (got.mean - want.mean).cwiseAbs().maxCoeff());
    worst = std::max(worst, (got.covariance - want.covariance).cwiseAbs().maxCoeff());
  }
  std::printf("gpcheck: 50 instances, worst deviation %.3e (tolerance 1e-10)\n", worst);
  return worst < 1e-10 ? 0 : 1;
}

int run_qpcheck() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst_box = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(u01(rng) * 5);
    Eigen::MatrixXd base(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) base(i, j) = 2.0 * u01(rng) - 1.0;
    Eigen::MatrixXd P = base.transpose() * base + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd q(n), l(n), u(n);
    for (int i = 0; i < n; ++i) {
      q(i) = 4.0 * u01(rng) - 2.0;
      l(i) = -1.0 - u01(rng);
      u(i) = 1.0 + u01(rng);
    }
    qp::StandardQp prob;
    prob.P = P;
    prob.q = q;
    prob.A = Eigen::MatrixXd::Identity(n, n);
    prob.l = l;
    prob.u = u;
    prob.n_orig = n;
    qp::QpSolution sol = qp::solve_qp(prob);
    Eigen::VectorXd want = oracles::active_set_box_qp(P, q, l, u);
    worst_box = std::max(worst_box, (sol.x - want).cwiseAbs().maxCoeff());
  }

  double worst_l1 = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const double rho = 0.5 + 2.0 * u01(rng);
    const double lam = 0.1 + 2.0 * u01(rng);
    const double v = 6.0 * u01(rng) - 3.0;
    qp::ConvexSubproblem sub;
    sub.P = rho * Eigen::MatrixXd::Identity(1, 1);
    sub.q = Eigen::VectorXd::Constant(1, -rho * v);
    sub.l1_terms.push_back({lam, Eigen::VectorXd::Ones(1), 0.0});
    sub.trust_bound = 10.0;
    qp::QpSolution sol = qp::solve_qp(qp::reformulate(sub));
    const double want = oracles::soft_threshold(v, lam / rho);
    worst_l1 = std::max(worst_l1, std::abs(sol.x(0) - want));
  }
  std::printf(
      "qpcheck: box vs enumeration worst %.3e (tol 1e-5); l1 vs prox worst %.3e (tol 1e-6)\n",
      worst_box, worst_l1);
  return (worst_box < 1e-5 && worst_l1 < 1e-6) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-driven adaptive sampling for a nonholonomic mobile sensor network"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a batch of seeded episodes");
  std::string config_path, method_str, mode_str, out_dir = "out";
  int runs = 20;
  std::int64_t seed = -1;
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--method", method_str, "scadmm|ladmm");
  run->add_option("--mode", mode_str, "central|distributed");
  run->add_option("--seed", seed, "base seed");
  run->add_option("--runs", runs, "number of independent episodes");
  run->add_option("--out", out_dir, "output directory");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the f0 gradient");
  auto* gpc = app.add_subcommand("gpcheck", "GP posterior vs dense-formula oracle");
  auto* qpc = app.add_subcommand("qpcheck", "QP solver vs enumeration and prox oracles");

  CLI11_PARSE(app, argc, argv);

  try {
    if (grad->parsed()) return run_gradcheck();
    if (gpc->parsed()) return run_gpcheck();
    if (qpc->parsed()) return run_qpcheck();

    harness::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = harness::load_config(config_path);
    if (!method_str.empty()) {
      if (method_str == "ladmm") cfg.method = solvers::Method::ladmm;
      else if (method_str == "scadmm") cfg.method = solvers::Method::scadmm;
      else throw mrsn::InvalidArgument("unknown method " + method_str);
    }
    if (!mode_str.empty()) {
      if (mode_str == "central" || mode_str == "centralized")
        cfg.mode = solvers::Mode::centralized;
      else if (mode_str == "distributed") cfg.mode = solvers::Mode::distributed;
      else throw mrsn::InvalidArgument("unknown mode " + mode_str);
    }
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    std::filesystem::create_directories(out_dir);

    harness::BatchReport report = harness::run_batch(cfg, runs, out_dir);
    std::printf("%d runs (%d failed), method=%s mode=%s\n", runs, report.failures,
                solvers::to_string(cfg.method), solvers::to_string(cfg.mode));
    std::printf("final-step ALPV quartiles: %.3f / %.3f / %.3f\n", report.alpv_quartiles[0],
                report.alpv_quartiles[1], report.alpv_quartiles[2]);
    std::printf("final-step RMSE quartiles: %.4f / %.4f / %.4f\n", report.rmse_quartiles[0],
                report.rmse_quartiles[1], report.rmse_quartiles[2]);
    std::printf("final-step MAE  quartiles: %.4f / %.4f / %.4f\n", report.mae_quartiles[0],
                report.mae_quartiles[1], report.mae_quartiles[2]);
    std::printf("median per-solve wall time: %.1f ms\n", report.median_solve_wall_ms);
    std::printf("outputs written to %s\n", out_dir.c_str());
    return report.failures == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
