#include <doctest.h>

#include <cmath>
#include <random>

#include "mrsn/admm.hpp"
#include "mrsn/gp.hpp"

using namespace mrsn;

namespace {

// A small deterministic multi-agent instance with a GP-driven objective.
struct Instance {
  std::vector<solvers::AgentProblem> problems;
  gp::Dataset data;
  gp::Hyperparams hyper;
  solvers::Objective objective;
  solvers::AdmmConfig cfg;

  Instance(int m, unsigned seed, double signal_variance = 0.2, double length_scale = 20.0,
           double noise_variance = 0.02) {
    hyper.constant_mean = 20.0;
    hyper.signal_variance = signal_variance;
    hyper.length_scale = length_scale;
    hyper.noise_variance = noise_variance;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(2.0, 38.0), uy(2.0, 28.0), uth(-3.1, 3.1);
    Eigen::MatrixX2d pos(m, 2);
    for (int i = 0; i < m; ++i) {
      solvers::AgentProblem p;
      p.index = i;
      bool ok = false;
      while (!ok) {
        p.start_state = {ux(rng), uy(rng), uth(rng)};
        ok = true;
        for (int j = 0; j < i; ++j)
          if ((Eigen::Vector2d(p.start_state.x, p.start_state.y) -
               Eigen::Vector2d(pos(j, 0), pos(j, 1)))
                  .norm() < 3.0)
            ok = false;
      }
      pos.row(i) << p.start_state.x, p.start_state.y;
      data.append({p.start_state.x, p.start_state.y}, 20.0);
      problems.push_back(p);
    }
    for (auto& p : problems)
      p.region = geometry::shrink(geometry::voronoi_cell(p.index, pos, cfg.domain), 0.5);
    const int mm = m;
    auto* d = &data;
    auto* h = &hyper;
    objective.value = [mm, d, h](const Eigen::VectorXd& z) {
      Eigen::MatrixX2d s(mm, 2);
      for (int i = 0; i < mm; ++i) s.row(i) = z.segment<2>(2 * i).transpose();
      return gp::neg_log_det(*d, *h, s);
    };
    objective.gradient = [mm, d, h](const Eigen::VectorXd& z) {
      Eigen::MatrixX2d s(mm, 2);
      for (int i = 0; i < mm; ++i) s.row(i) = z.segment<2>(2 * i).transpose();
      return gp::grad_neg_log_det(*d, *h, s);
    };
  }
};

void check_feasible(const solvers::AgentProblem& p, const solvers::TrajectoryVars& w,
                    double dyn_tol) {
  auto cs = solvers::build_agent_constraints(p);
  CHECK(cs.g(w.flatten()).cwiseAbs().maxCoeff() < dyn_tol);
  for (int t = 0; t < w.horizon(); ++t) {
    CHECK(w.controls(t, 0) >= p.bounds.v_min - 1e-6);
    CHECK(w.controls(t, 0) <= p.bounds.v_max + 1e-6);
    CHECK(w.controls(t, 1) >= p.bounds.omega_min - 1e-6);
    CHECK(w.controls(t, 1) <= p.bounds.omega_max + 1e-6);
    CHECK(geometry::contains(p.region, w.states.row(t).head<2>().transpose(), 1e-6));
  }
}

}  // namespace

TEST_CASE("TrajectoryVars: flatten order is states then controls, row-major") {
  solvers::TrajectoryVars w;
  w.states = Eigen::MatrixX3d(2, 3);
  w.states << 1, 2, 3, 4, 5, 6;
  w.controls = Eigen::MatrixX2d(2, 2);
  w.controls << 7, 8, 9, 10;
  Eigen::VectorXd f = w.flatten();
  REQUIRE(f.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(f(i) == doctest::Approx(i + 1.0));
  auto back = solvers::TrajectoryVars::unflatten(f, 2);
  CHECK((back.states - w.states).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.controls - w.controls).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.final_position().x() == doctest::Approx(4.0));
  CHECK(back.final_position().y() == doctest::Approx(5.0));
}

TEST_CASE("build_agent_constraints: hold trajectory is a dynamics fixed point") {
  solvers::AgentProblem p;
  p.start_state = {5.0, 6.0, 1.0};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 5.0, 6.0).finished(), {});
  auto w = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  auto cs = solvers::build_agent_constraints(p);
  CHECK(cs.g(w.flatten()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("build_agent_constraints: box violation shows up in h") {
  solvers::AgentProblem p;
  p.start_state = {5.0, 6.0, 0.0};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 5.0, 6.0).finished(), {});
  auto w = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  w.controls(3, 0) = p.bounds.v_max + 1.0;
  auto cs = solvers::build_agent_constraints(p);
  CHECK(cs.h(w.flatten()).maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("build_agent_constraints: g equals the rollout mismatch") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  solvers::AgentProblem p;
  p.start_state = {10.0, 10.0, 0.3};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 10.0, 10.0).finished(), {});
  solvers::TrajectoryVars w = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  for (int t = 0; t < p.horizon; ++t) {
    w.states.row(t) << 10.0 + u(rng), 10.0 + u(rng), u(rng);
    w.controls.row(t) << u(rng), u(rng);
  }
  auto cs = solvers::build_agent_constraints(p);
  Eigen::VectorXd g = cs.g(w.flatten());
  vehicle::RobotState prev = p.start_state;
  for (int t = 0; t < p.horizon; ++t) {
    vehicle::RobotState pred =
        vehicle::step({prev.x, prev.y, prev.heading},
                      {w.controls(t, 0), w.controls(t, 1)}, p.dt);
    CHECK(g(3 * t + 0) == doctest::Approx(w.states(t, 0) - pred.x).epsilon(1e-12));
    CHECK(g(3 * t + 1) == doctest::Approx(w.states(t, 1) - pred.y).epsilon(1e-12));
    prev = {w.states(t, 0), w.states(t, 1), w.states(t, 2)};
  }
}

TEST_CASE("g_jacobian matches finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  solvers::AgentProblem p;
  p.horizon = 4;
  p.start_state = {10.0, 10.0, 0.3};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 10.0, 10.0).finished(), {});
  auto cs = solvers::build_agent_constraints(p);
  Eigen::VectorXd w = solvers::TrajectoryVars::hold(p.start_state, p.horizon).flatten();
  for (int i = 0; i < w.size(); ++i) w(i) += 0.3 * u(rng);
  Eigen::MatrixXd jac = cs.g_jacobian(w);
  const double h = 1e-7;
  for (int j = 0; j < w.size(); ++j) {
    Eigen::VectorXd wp = w, wm = w;
    wp(j) += h;
    wm(j) -= h;
    Eigen::VectorXd fd = (cs.g(wp) - cs.g(wm)) / (2 * h);
    CHECK((jac.col(j) - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("z_step algebra") {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(4, 10.0);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(4);
  geometry::Rect dom;
  CHECK((solvers::z_step(v, mu, 0.1, 0.01, grad, dom) - v).cwiseAbs().maxCoeff() < 1e-15);

  grad = Eigen::VectorXd::Constant(4, 0.11);
  Eigen::VectorXd z = solvers::z_step(v, mu, 0.1, 0.01, grad, dom);
  CHECK((z - (v.array() - 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-12);

  // Clamping: a point on the boundary pushed outward stays inside the domain.
  Eigen::VectorXd edge(2);
  edge << 0.0, 0.0;
  Eigen::VectorXd push = Eigen::VectorXd::Constant(2, 0.5);  // positive grad pushes below 0
  Eigen::VectorXd zc = solvers::z_step(edge, Eigen::VectorXd::Zero(2), 0.1, 0.01, push, dom);
  CHECK(zc(0) == doctest::Approx(0.0));
  CHECK(zc(1) == doctest::Approx(0.0));
}

TEST_CASE("dual_step algebra") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4), v = Eigen::VectorXd::Zero(4);
  CHECK((solvers::dual_step(mu, z, v, 0.1) - mu).cwiseAbs().maxCoeff() == 0.0);
  z(0) = 1.0;
  Eigen::VectorXd m1 = solvers::dual_step(mu, z, v, 0.1);
  CHECK(m1(0) == doctest::Approx(0.1).epsilon(1e-15));
  Eigen::VectorXd m2 = solvers::dual_step(m1, z, v, 0.1);
  CHECK(m2(0) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("apply_trust_rule: the four cases") {
  solvers::ScConfig sc;  // eps0=1, eps1=1e2, eps2=1e3, betas 0.5/2.0
  auto [acc_rej, r_rej] = solvers::apply_trust_rule(2.0 * sc.eps2, 0.5, sc);
  CHECK_FALSE(acc_rej);
  CHECK(r_rej == doctest::Approx(0.25));
  auto [acc_shrink, r_shrink] = solvers::apply_trust_rule(500.0, 0.5, sc);
  CHECK(acc_shrink);
  CHECK(r_shrink == doctest::Approx(0.25));
  auto [acc_keep, r_keep] = solvers::apply_trust_rule(50.0, 0.5, sc);
  CHECK(acc_keep);
  CHECK(r_keep == doctest::Approx(0.5));
  auto [acc_grow, r_grow] = solvers::apply_trust_rule(0.5 * sc.eps0, 0.5, sc);
  CHECK(acc_grow);
  CHECK(r_grow == doctest::Approx(1.0));
  // Clamping at both ends.
  auto [a1, r_hi] = solvers::apply_trust_rule(0.0, sc.r_max, sc);
  CHECK(r_hi == doctest::Approx(sc.r_max));
  auto [a2, r_lo] = solvers::apply_trust_rule(1e9, 2.0 * sc.r_min, sc);
  CHECK_FALSE(a2);
  CHECK(r_lo == doctest::Approx(sc.r_min));
}

TEST_CASE("scadmm_w_step: delta vanishes for the zero step") {
  // With a hold warm start and the target at the current position, the QP
  // returns (near) zero displacement and the model error is (near) zero.
  solvers::AgentProblem p;
  p.start_state = {20.0, 15.0, 0.5};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 20.0, 15.0).finished(), {});
  solvers::AdmmConfig cfg;
  auto w = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  auto r = solvers::scadmm_w_step(p, w, {20.0, 15.0}, cfg.rho, 0.5, cfg);
  CHECK(r.accepted);
  CHECK(std::abs(r.delta) < 1e-3);
}

TEST_CASE("scadmm_w_step: rejection leaves the iterate unchanged") {
  Instance inst(2, 77);
  auto& p = inst.problems[0];
  auto w = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  // A far-away target at full radius forces a large, badly modeled step.
  Eigen::Vector2d target = Eigen::Vector2d(p.start_state.x, p.start_state.y) +
                           Eigen::Vector2d(8.0, -6.0);
  auto r = solvers::scadmm_w_step(p, w, target, inst.cfg.rho, 1.0, inst.cfg);
  if (!r.accepted) {
    CHECK((r.w.flatten() - w.flatten()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.radius == doctest::Approx(0.5));
  }
  CHECK(r.radius >= inst.cfg.sc.r_min);
  CHECK(r.radius <= inst.cfg.sc.r_max);
}

TEST_CASE("ladmm_w_step: stationary when the target is already met and costs are off") {
  solvers::AgentProblem p;
  p.start_state = {20.0, 15.0, 0.5};
  p.weights.Q.setZero();
  p.weights.R.setZero();
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 20.0, 15.0).finished(), {});
  solvers::AdmmConfig cfg;
  auto warm = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
  auto w = solvers::ladmm_w_step(p, warm.final_position(), cfg.rho, warm, cfg);
  CHECK((w.final_position() - warm.final_position()).norm() < 1e-6);
  auto cs = solvers::build_agent_constraints(p);
  CHECK(cs.g(w.flatten()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("ladmm_w_step: reaches a nearby target with tight dynamics feasibility") {
  Instance inst(3, 5);
  for (auto& p : inst.problems) {
    auto warm = solvers::TrajectoryVars::hold(p.start_state, p.horizon);
    Eigen::Vector2d target = warm.final_position() + Eigen::Vector2d(0.4, -0.3);
    auto w = solvers::ladmm_w_step(p, target, inst.cfg.rho, warm, inst.cfg);
    check_feasible(p, w, 1e-6);
    // The solution must trade the control cost against the proximal pull, so
    // it moves toward the target rather than staying put.
    CHECK((w.final_position() - target).norm() < (warm.final_position() - target).norm());
  }
}

TEST_CASE("single agent seeks a variance peak") {
  // One robot, informative prior with a data point behind it: moving away
  // from the sampled location increases the posterior variance at the final
  // position, so the returned objective must improve on standing still.
  solvers::AgentProblem p;
  p.horizon = 10;
  p.start_state = {20.0, 15.0, 0.0};
  p.region = geometry::voronoi_cell(0, (Eigen::MatrixX2d(1, 2) << 20.0, 15.0).finished(), {});
  gp::Dataset data;
  data.append({16.0, 15.0}, 20.0);  // offset from the robot: nonzero pull
  gp::Hyperparams h;
  h.constant_mean = 20.0;
  h.signal_variance = 0.2;
  h.length_scale = 8.0;
  h.noise_variance = 0.02;
  solvers::Objective obj;
  obj.value = [&](const Eigen::VectorXd& z) {
    return gp::neg_log_det(data, h, Eigen::MatrixX2d(z.transpose()));
  };
  obj.gradient = [&](const Eigen::VectorXd& z) {
    return gp::grad_neg_log_det(data, h, Eigen::MatrixX2d(z.transpose()));
  };
  solvers::AdmmConfig cfg;
  auto out = solvers::run_scadmm({p}, obj, cfg, solvers::Mode::centralized);
  Eigen::VectorXd start(2);
  start << 20.0, 15.0;
  CHECK(obj.value(out.w[0].final_position()) < obj.value(start));
}

TEST_CASE("run_scadmm: giant tolerance stops after one iteration") {
  Instance inst(3, 9);
  inst.cfg.eps_res = 1e9;
  auto out = solvers::run_scadmm(inst.problems, inst.objective, inst.cfg,
                                 solvers::Mode::centralized);
  CHECK(out.iterations == 1);
  CHECK(out.converged);
  CHECK(out.residual_history.size() == 1);
}

TEST_CASE("run_ladmm: giant tolerance stops after one iteration") {
  Instance inst(3, 9);
  inst.cfg.eps_res = 1e9;
  auto out = solvers::run_ladmm(inst.problems, inst.objective, inst.cfg,
                                solvers::Mode::centralized);
  CHECK(out.iterations == 1);
  CHECK(out.converged);
}

TEST_CASE("run_scadmm: converges on a seeded 5-agent instance with feasible output") {
  Instance inst(5, 103);
  auto out = solvers::run_scadmm(inst.problems, inst.objective, inst.cfg,
                                 solvers::Mode::centralized);
  CHECK(out.converged);
  CHECK(out.residual_history.back() < 1e-3);
  CHECK(static_cast<int>(out.residual_history.size()) <= inst.cfg.k_max);
  for (int i = 0; i < 5; ++i) check_feasible(inst.problems[i], out.w[i], 1e-3);
  // The objective trace settles: final value within 1% of the last recorded.
  const double last = out.objective_history.back();
  const double prev = out.objective_history[out.objective_history.size() - 2];
  CHECK(std::abs(prev - last) <= 0.01 * std::max(1.0, std::abs(last)));
}

TEST_CASE("run_ladmm: converges on a seeded 5-agent instance with tight dynamics") {
  Instance inst(5, 101);
  auto out = solvers::run_ladmm(inst.problems, inst.objective, inst.cfg,
                                solvers::Mode::centralized);
  CHECK(out.converged);
  for (int i = 0; i < 5; ++i) check_feasible(inst.problems[i], out.w[i], 1e-6);
}

TEST_CASE("centralized and distributed modes agree") {
  Instance inst(4, 33);
  for (auto method : {solvers::Method::scadmm, solvers::Method::ladmm}) {
    auto run = [&](solvers::Mode mode) {
      return method == solvers::Method::scadmm
                 ? solvers::run_scadmm(inst.problems, inst.objective, inst.cfg, mode)
                 : solvers::run_ladmm(inst.problems, inst.objective, inst.cfg, mode);
    };
    auto a = run(solvers::Mode::centralized);
    auto b = run(solvers::Mode::distributed);
    REQUIRE(a.residual_history.size() == b.residual_history.size());
    for (std::size_t k = 0; k < a.residual_history.size(); ++k)
      CHECK(std::abs(a.residual_history[k] - b.residual_history[k]) < 1e-9);
    CHECK((a.z - b.z).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("residual history is consistent with the returned iterates") {
  Instance inst(3, 55);
  auto out = solvers::run_scadmm(inst.problems, inst.objective, inst.cfg,
                                 solvers::Mode::centralized);
  Eigen::VectorXd v(2 * 3);
  for (int i = 0; i < 3; ++i) v.segment<2>(2 * i) = out.w[i].final_position();
  CHECK(out.residual_history.back() == doctest::Approx((out.z - v).norm()).epsilon(1e-9));
}
