// Micro-benchmarks for the QP solver, GP posterior, and one consensus solve.

#include <benchmark/benchmark.h>

#include <random>

#include "mrsn/admm.hpp"
#include "mrsn/gp.hpp"
#include "mrsn/qp.hpp"

namespace {

using namespace mrsn;

qp::StandardQp random_box_qp(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Eigen::MatrixXd base(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) base(i, j) = 2.0 * u01(rng) - 1.0;
  qp::StandardQp prob;
  prob.P = base.transpose() * base + 0.1 * Eigen::MatrixXd::Identity(n, n);
  prob.q = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return 4.0 * u01(rng) - 2.0; });
  prob.A = Eigen::MatrixXd::Identity(n, n);
  prob.l = Eigen::VectorXd::Constant(n, -1.5);
  prob.u = Eigen::VectorXd::Constant(n, 1.5);
  prob.n_orig = n;
  return prob;
}

void BM_SolveQp(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto prob = random_box_qp(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) {
    auto sol = qp::solve_qp(prob);
    benchmark::DoNotOptimize(sol.x);
  }
}
BENCHMARK(BM_SolveQp)->Arg(20)->Arg(50)->Arg(100);

void BM_GpPredict(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(0.0, 40.0), uy(0.0, 30.0);
  gp::Hyperparams h;
  h.signal_variance = 16.0;
  h.length_scale = 8.0;
  gp::Dataset data;
  for (int i = 0; i < state.range(0); ++i) data.append({ux(rng), uy(rng)}, ux(rng));
  Eigen::MatrixX2d q(5, 2);
  for (int i = 0; i < 5; ++i) q.row(i) << ux(rng), uy(rng);
  for (auto _ : state) {
    auto post = gp::predict(data, h, q);
    benchmark::DoNotOptimize(post.covariance);
  }
}
BENCHMARK(BM_GpPredict)->Arg(25)->Arg(75);

void BM_ScadmmSolve(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(5.0, 35.0), uy(5.0, 25.0);
  solvers::AdmmConfig cfg;
  cfg.domain = {};
  gp::Hyperparams h;
  h.signal_variance = 16.0;
  h.length_scale = 8.0;
  gp::Dataset data;
  std::vector<solvers::AgentProblem> problems;
  Eigen::MatrixX2d pos(5, 2);
  for (int i = 0; i < 5; ++i) {
    solvers::AgentProblem p;
    p.index = i;
    p.start_state = {ux(rng), uy(rng), 0.0};
    pos.row(i) << p.start_state.x, p.start_state.y;
    data.append({p.start_state.x, p.start_state.y}, ux(rng));
    problems.push_back(p);
  }
  for (auto& p : problems) {
    p.region = geometry::voronoi_cell(p.index, pos, cfg.domain);
    p.region = geometry::shrink(p.region, 0.5);
  }
  solvers::Objective obj;
  obj.value = [&](const Eigen::VectorXd& z) {
    Eigen::MatrixX2d s(5, 2);
    for (int i = 0; i < 5; ++i) s.row(i) = z.segment<2>(2 * i).transpose();
    return gp::neg_log_det(data, h, s);
  };
  obj.gradient = [&](const Eigen::VectorXd& z) {
    Eigen::MatrixX2d s(5, 2);
    for (int i = 0; i < 5; ++i) s.row(i) = z.segment<2>(2 * i).transpose();
    return gp::grad_neg_log_det(data, h, s);
  };
  for (auto _ : state) {
    auto out = solvers::run_scadmm(problems, obj, cfg, solvers::Mode::centralized);
    benchmark::DoNotOptimize(out.residual_history);
  }
}
BENCHMARK(BM_ScadmmSolve)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
