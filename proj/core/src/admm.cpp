#include "mrsn/admm.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <future>

#include <nlohmann/json.hpp>

#include "mrsn/errors.hpp"

namespace mrsn::solvers {

namespace {

// flattened-w index helpers: states first (H x 3 row-major), then controls
int state_idx(int j, int k) { return 3 * j + k; }
int control_idx(int horizon, int j, int k) { return 3 * horizon + 2 * j + k; }

std::vector<vehicle::ControlInput> to_controls(const Eigen::MatrixX2d& u) {
  std::vector<vehicle::ControlInput> out(static_cast<size_t>(u.rows()));
  for (Eigen::Index j = 0; j < u.rows(); ++j) out[static_cast<size_t>(j)] = {u(j, 0), u(j, 1)};
  return out;
}

double agent_cost(const AgentProblem& p, const TrajectoryVars& w) {
  return vehicle::control_cost(to_controls(w.controls), p.u_prev, p.weights);
}

/// Quadratic form of f_i over the stacked controls u (2H):
/// f_i(u) = u' W u + c' u + const.
void control_cost_quadratic(const AgentProblem& p, Eigen::MatrixXd& W, Eigen::VectorXd& c) {
  const int H = p.horizon;
  W = Eigen::MatrixXd::Zero(2 * H, 2 * H);
  c = Eigen::VectorXd::Zero(2 * H);
  const Eigen::Matrix2d& Q = p.weights.Q;
  const Eigen::Matrix2d& R = p.weights.R;
  const Eigen::Vector2d uprev(p.u_prev.v, p.u_prev.omega);
  for (int j = 0; j < H; ++j) {
    W.block<2, 2>(2 * j, 2 * j) += Q + R;
    if (j == 0) {
      c.segment<2>(0) += -2.0 * (R * uprev);
    } else {
      W.block<2, 2>(2 * (j - 1), 2 * (j - 1)) += R;
      W.block<2, 2>(2 * j, 2 * (j - 1)) -= R;
      W.block<2, 2>(2 * (j - 1), 2 * j) -= R;
    }
  }
}

double penalty_value(const ConstraintSet& cs, const Eigen::VectorXd& w, double lambda,
                     double tau) {
  return lambda * cs.g(w).cwiseAbs().sum() + tau * cs.h(w).cwiseMax(0.0).sum();
}

/// Builds the convex subproblem in the step variable delta around w:
///   f_i(w+delta) + cw ||F(w+delta) - target||^2 + lambda |g_lin|
///   s.t. box/region rows explicit, ||delta||_inf <= r.
qp::ConvexSubproblem build_subproblem(const AgentProblem& p, const ConstraintSet& cs,
                                      const Eigen::VectorXd& w, const Eigen::Vector2d& target,
                                      double consensus_weight, double lambda, double radius,
                                      double margin) {
  const int H = p.horizon;
  const int n = 5 * H;
  qp::ConvexSubproblem sub;
  sub.P = Eigen::MatrixXd::Zero(n, n);
  sub.q = Eigen::VectorXd::Zero(n);
  sub.trust_bound = radius;

  Eigen::MatrixXd W;
  Eigen::VectorXd c;
  control_cost_quadratic(p, W, c);
  const Eigen::VectorXd u0 = w.tail(2 * H);
  sub.P.bottomRightCorner(2 * H, 2 * H) = 2.0 * W;
  sub.q.tail(2 * H) = 2.0 * (W * u0) + c;

  const int ix = state_idx(H - 1, 0);
  const int iy = state_idx(H - 1, 1);
  sub.P(ix, ix) += 2.0 * consensus_weight;
  sub.P(iy, iy) += 2.0 * consensus_weight;
  sub.q(ix) += 2.0 * consensus_weight * (w(ix) - target.x());
  sub.q(iy) += 2.0 * consensus_weight * (w(iy) - target.y());

  const Eigen::VectorXd g0 = cs.g(w);
  const Eigen::MatrixXd jac = cs.g_jacobian(w);
  sub.l1_terms.reserve(static_cast<size_t>(g0.size()));
  for (Eigen::Index row = 0; row < g0.size(); ++row)
    sub.l1_terms.push_back({lambda, jac.row(row).transpose(), g0(row)});

  for (const auto& abs_row : cs.linear_ineq_rows(margin)) {
    const double shift = abs_row.a.dot(w);
    qp::LinearRow rel;
    rel.a = abs_row.a;
    rel.lo = abs_row.lo <= -qp::kInf ? -qp::kInf : abs_row.lo - shift;
    rel.hi = abs_row.hi >= qp::kInf ? qp::kInf : abs_row.hi - shift;
    sub.ineq_rows.push_back(std::move(rel));
  }
  return sub;
}

/// delta = J(w + step) - J~(step): the linearization error of the dynamics
/// penalties (the inequality rows are linear, so they cancel).
double model_error(const ConstraintSet& cs, const Eigen::VectorXd& w, const Eigen::VectorXd& step,
                   double lambda, double tau) {
  const Eigen::VectorXd g0 = cs.g(w);
  const Eigen::MatrixXd jac = cs.g_jacobian(w);
  const Eigen::VectorXd w_new = w + step;
  const double actual = penalty_value(cs, w_new, lambda, tau);
  const double predicted = lambda * (g0 + jac * step).cwiseAbs().sum() +
                           tau * cs.h(w_new).cwiseMax(0.0).sum();
  return actual - predicted;
}

using AgentStep = std::function<void(int)>;

void for_each_agent(int count, Mode mode, const AgentStep& fn) {
  if (mode == Mode::centralized) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> tasks;
  tasks.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    tasks.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
  for (auto& t : tasks) t.get();  // fixed index order
}

ConsensusState run_consensus(const std::vector<AgentProblem>& problems,
                             const Objective& objective, const AdmmConfig& cfg, Mode mode,
                             Method method) {
  const int M = static_cast<int>(problems.size());
  if (M == 0) throw InvalidArgument("run: no agent problems");
  const auto t_start = std::chrono::steady_clock::now();

  ConsensusState st;
  st.w.reserve(static_cast<size_t>(M));
  st.z.resize(2 * M);
  for (int i = 0; i < M; ++i) {
    st.w.push_back(TrajectoryVars::hold(problems[i].start_state, problems[i].horizon));
    st.z.segment<2>(2 * i) = problems[i].start_state.position();
  }
  st.mu = Eigen::VectorXd::Zero(2 * M);

  std::vector<ConstraintSet> constraints;
  constraints.reserve(static_cast<size_t>(M));
  for (const auto& p : problems) constraints.push_back(build_agent_constraints(p));

  std::vector<double> trust(static_cast<size_t>(M), cfg.sc.r_init);
  std::vector<qp::QpSolution> qp_warm(static_cast<size_t>(M));

  for (int k = 0; k < cfg.k_max; ++k) {
    std::vector<Eigen::Vector2d> targets(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i)
      targets[static_cast<size_t>(i)] = st.z.segment<2>(2 * i) + st.mu.segment<2>(2 * i) / cfg.rho;

    for_each_agent(M, mode, [&](int i) {
      const auto iu = static_cast<size_t>(i);
      if (method == Method::ladmm) {
        st.w[iu] = ladmm_w_step(problems[iu], targets[iu], cfg.rho, st.w[iu], cfg, &qp_warm[iu]);
      } else {
        ScStepResult r =
            scadmm_w_step(problems[iu], st.w[iu], targets[iu], cfg.rho, trust[iu], cfg,
                          &qp_warm[iu]);
        st.w[iu] = r.w;
        trust[iu] = r.radius;
      }
    });

    Eigen::VectorXd v(2 * M);
    for (int i = 0; i < M; ++i) v.segment<2>(2 * i) = st.w[static_cast<size_t>(i)].final_position();

    const Eigen::VectorXd grad = objective.gradient(v);
    st.z = z_step(v, st.mu, cfg.rho, cfg.lipschitz, grad, cfg.domain);
    st.mu = dual_step(st.mu, st.z, v, cfg.rho);

    const double res = (st.z - v).norm();
    st.residual_history.push_back(res);
    double obj = objective.value(st.z);
    for (int i = 0; i < M; ++i) {
      const auto iu = static_cast<size_t>(i);
      obj += agent_cost(problems[iu], st.w[iu]) +
             penalty_value(constraints[iu], st.w[iu].flatten(), cfg.sc.lambda, cfg.sc.tau);
    }
    st.objective_history.push_back(obj);
    st.iterations = k + 1;
    if (res < cfg.eps_res) {
      st.converged = true;
      break;
    }
  }

  st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t_start)
                   .count();
  return st;
}

}  // namespace

const char* to_string(Mode m) { return m == Mode::centralized ? "centralized" : "distributed"; }
const char* to_string(Method m) { return m == Method::ladmm ? "ladmm" : "scadmm"; }

TrajectoryVars TrajectoryVars::hold(const vehicle::RobotState& s, int horizon) {
  TrajectoryVars w;
  w.states.resize(horizon, 3);
  w.controls = Eigen::MatrixX2d::Zero(horizon, 2);
  for (int j = 0; j < horizon; ++j) w.states.row(j) << s.x, s.y, s.heading;
  return w;
}

TrajectoryVars TrajectoryVars::unflatten(const Eigen::VectorXd& w, int horizon) {
  TrajectoryVars out;
  out.states.resize(horizon, 3);
  out.controls.resize(horizon, 2);
  for (int j = 0; j < horizon; ++j) {
    out.states.row(j) = w.segment<3>(3 * j).transpose();
    out.controls.row(j) = w.segment<2>(3 * horizon + 2 * j).transpose();
  }
  return out;
}

Eigen::VectorXd TrajectoryVars::flatten() const {
  const int H = horizon();
  Eigen::VectorXd w(5 * H);
  for (int j = 0; j < H; ++j) {
    w.segment<3>(3 * j) = states.row(j).transpose();
    w.segment<2>(3 * H + 2 * j) = controls.row(j).transpose();
  }
  return w;
}

Eigen::Vector2d TrajectoryVars::final_position() const {
  return states.row(states.rows() - 1).head<2>();
}

ConstraintSet build_agent_constraints(const AgentProblem& p) {
  if (p.horizon < 1) throw InvalidArgument("build_agent_constraints: horizon must be >= 1");
  return ConstraintSet{p};
}

Eigen::VectorXd ConstraintSet::g(const Eigen::VectorXd& w) const {
  const int H = problem.horizon;
  const double dt = problem.dt;
  Eigen::VectorXd out(3 * H);
  Eigen::Vector3d prev(problem.start_state.x, problem.start_state.y, problem.start_state.heading);
  for (int j = 0; j < H; ++j) {
    const Eigen::Vector3d cur = w.segment<3>(3 * j);
    const double v = w(control_idx(H, j, 0));
    const double om = w(control_idx(H, j, 1));
    // heading left unnormalized inside the horizon to keep g continuous
    out(3 * j + 0) = cur(0) - (prev(0) + dt * std::cos(prev(2)) * v);
    out(3 * j + 1) = cur(1) - (prev(1) + dt * std::sin(prev(2)) * v);
    out(3 * j + 2) = cur(2) - (prev(2) + dt * om);
    prev = cur;
  }
  return out;
}

Eigen::MatrixXd ConstraintSet::g_jacobian(const Eigen::VectorXd& w) const {
  const int H = problem.horizon;
  const double dt = problem.dt;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * H, 5 * H);
  Eigen::Vector3d prev(problem.start_state.x, problem.start_state.y, problem.start_state.heading);
  for (int j = 0; j < H; ++j) {
    const double v = w(control_idx(H, j, 0));
    const double th = prev(2);
    for (int k = 0; k < 3; ++k) jac(3 * j + k, state_idx(j, k)) = 1.0;
    if (j > 0) {
      // -A_j block
      for (int k = 0; k < 3; ++k) jac(3 * j + k, state_idx(j - 1, k)) = -1.0;
      jac(3 * j + 0, state_idx(j - 1, 2)) = dt * std::sin(th) * v;
      jac(3 * j + 1, state_idx(j - 1, 2)) = -dt * std::cos(th) * v;
    }
    jac(3 * j + 0, control_idx(H, j, 0)) = -dt * std::cos(th);
    jac(3 * j + 1, control_idx(H, j, 0)) = -dt * std::sin(th);
    jac(3 * j + 2, control_idx(H, j, 1)) = -dt;
    prev = w.segment<3>(3 * j);
  }
  return jac;
}

Eigen::VectorXd ConstraintSet::h(const Eigen::VectorXd& w) const {
  const int H = problem.horizon;
  const auto& b = problem.bounds;
  const int facets = static_cast<int>(problem.region.halfplanes.size());
  Eigen::VectorXd out(4 * H + H * facets);
  for (int j = 0; j < H; ++j) {
    const double v = w(control_idx(H, j, 0));
    const double om = w(control_idx(H, j, 1));
    out(4 * j + 0) = v - b.v_max;
    out(4 * j + 1) = b.v_min - v;
    out(4 * j + 2) = om - b.omega_max;
    out(4 * j + 3) = b.omega_min - om;
  }
  int r = 4 * H;
  for (int j = 0; j < H; ++j) {
    const Eigen::Vector2d s = w.segment<2>(state_idx(j, 0));
    for (const auto& hp : problem.region.halfplanes) out(r++) = hp.normal.dot(s) - hp.offset;
  }
  return out;
}

std::vector<qp::LinearRow> ConstraintSet::linear_ineq_rows(double margin) const {
  const int H = problem.horizon;
  const auto& b = problem.bounds;
  std::vector<qp::LinearRow> rows;
  rows.reserve(static_cast<size_t>(2 * H + H * problem.region.halfplanes.size()));
  for (int j = 0; j < H; ++j) {
    qp::LinearRow rv{Eigen::VectorXd::Zero(5 * H), b.v_min + margin, b.v_max - margin};
    rv.a(control_idx(H, j, 0)) = 1.0;
    rows.push_back(std::move(rv));
    qp::LinearRow rw{Eigen::VectorXd::Zero(5 * H), b.omega_min + margin, b.omega_max - margin};
    rw.a(control_idx(H, j, 1)) = 1.0;
    rows.push_back(std::move(rw));
  }
  for (int j = 0; j < H; ++j) {
    for (const auto& hp : problem.region.halfplanes) {
      qp::LinearRow row{Eigen::VectorXd::Zero(5 * H), -qp::kInf, hp.offset - margin};
      row.a(state_idx(j, 0)) = hp.normal.x();
      row.a(state_idx(j, 1)) = hp.normal.y();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

Eigen::VectorXd z_step(const Eigen::VectorXd& v, const Eigen::VectorXd& mu, double rho, double L,
                       const Eigen::VectorXd& grad, const geometry::Rect& domain) {
  Eigen::VectorXd z = v - (grad + mu) / (rho + L);
  for (Eigen::Index i = 0; i + 1 < z.size(); i += 2) {
    z(i) = std::clamp(z(i), domain.x_min, domain.x_max);
    z(i + 1) = std::clamp(z(i + 1), domain.y_min, domain.y_max);
  }
  return z;
}

Eigen::VectorXd dual_step(const Eigen::VectorXd& mu, const Eigen::VectorXd& z,
                          const Eigen::VectorXd& v, double rho) {
  return mu + rho * (z - v);
}

std::pair<bool, double> apply_trust_rule(double delta, double radius, const ScConfig& sc) {
  bool accepted = true;
  double r_new = radius;
  if (delta > sc.eps2) {
    accepted = false;
    r_new = sc.beta_fail * radius;
  } else if (delta > sc.eps1) {
    r_new = sc.beta_fail * radius;
  } else if (delta > sc.eps0) {
    // accurate enough: keep the radius
  } else {
    r_new = sc.beta_succ * radius;
  }
  return {accepted, std::clamp(r_new, sc.r_min, sc.r_max)};
}

ScStepResult scadmm_w_step(const AgentProblem& p, const TrajectoryVars& w_prev,
                           const Eigen::Vector2d& target, double rho, double trust_radius,
                           const AdmmConfig& cfg, qp::QpSolution* qp_warm) {
  const auto& sc = cfg.sc;
  ConstraintSet cs = build_agent_constraints(p);
  const Eigen::VectorXd w = w_prev.flatten();

  qp::ConvexSubproblem sub =
      build_subproblem(p, cs, w, target, 0.5 * rho, sc.lambda, trust_radius,
                       cfg.constraint_margin);
  qp::StandardQp qp_std = reformulate(sub);
  qp::QpSolution sol = qp::solve_qp(qp_std, cfg.qp_settings, qp_warm);
  if (qp_warm) *qp_warm = sol;

  ScStepResult out;
  if (sol.status == qp::QpStatus::infeasible) {
    out.w = w_prev;
    out.delta = 0.0;
    out.accepted = false;
    out.radius = std::clamp(sc.beta_fail * trust_radius, sc.r_min, sc.r_max);
    return out;
  }

  const Eigen::VectorXd step = sol.x.head(5 * p.horizon);
  out.delta = model_error(cs, w, step, sc.lambda, sc.tau);
  std::tie(out.accepted, out.radius) = apply_trust_rule(out.delta, trust_radius, sc);
  out.w = out.accepted ? TrajectoryVars::unflatten(w + step, p.horizon) : w_prev;
  return out;
}

TrajectoryVars ladmm_w_step(const AgentProblem& p, const Eigen::Vector2d& target, double rho,
                            const TrajectoryVars& warm, const AdmmConfig& cfg,
                            qp::QpSolution* qp_warm) {
  const auto& sc = cfg.sc;
  ConstraintSet cs = build_agent_constraints(p);
  const int n = 5 * p.horizon;
  const double cw = 0.5 * rho;
  const int ix = state_idx(p.horizon - 1, 0);

  auto proximal_objective = [&](const Eigen::VectorXd& w) {
    const Eigen::Vector2d fpos(w(ix), w(ix + 1));
    return vehicle::control_cost(to_controls(TrajectoryVars::unflatten(w, p.horizon).controls),
                                 p.u_prev, p.weights) +
           cw * (fpos - target).squaredNorm();
  };

  Eigen::VectorXd w = warm.flatten();
  Eigen::VectorXd best_w = w;
  double best_obj = proximal_objective(w);
  double radius = sc.r_init;

  for (int it = 0; it < cfg.ladmm_inner_max; ++it) {
    qp::ConvexSubproblem sub =
        build_subproblem(p, cs, w, target, cw, sc.lambda, radius, cfg.constraint_margin);
    qp::StandardQp qp_std = reformulate(sub);
    qp::QpSolution sol = qp::solve_qp(qp_std, cfg.qp_settings, qp_warm);
    if (qp_warm) *qp_warm = sol;
    if (sol.status == qp::QpStatus::infeasible) {
      if (radius <= sc.r_min * (1.0 + 1e-12)) break;
      radius = std::clamp(sc.beta_fail * radius, sc.r_min, sc.r_max);
      continue;
    }
    const Eigen::VectorXd step = sol.x.head(n);
    const double delta = model_error(cs, w, step, sc.lambda, sc.tau);
    bool accepted = false;
    std::tie(accepted, radius) = apply_trust_rule(delta, radius, sc);

    if (accepted) {
      w += step;
      if (cs.g(w).cwiseAbs().maxCoeff() <= cfg.dynamics_tol) {
        const double obj = proximal_objective(w);
        if (obj < best_obj) {
          best_obj = obj;
          best_w = w;
        }
      }
      if (step.cwiseAbs().maxCoeff() < cfg.ladmm_inner_tol) break;
    } else if (radius <= sc.r_min * (1.0 + 1e-12)) {
      break;
    }
  }

  if (cs.g(best_w).cwiseAbs().maxCoeff() > cfg.dynamics_tol)
    throw SubproblemFailure("ladmm_w_step: inner loop left dynamics infeasible");
  return TrajectoryVars::unflatten(best_w, p.horizon);
}

ConsensusState run_ladmm(const std::vector<AgentProblem>& problems, const Objective& objective,
                         const AdmmConfig& cfg, Mode mode) {
  return run_consensus(problems, objective, cfg, mode, Method::ladmm);
}

ConsensusState run_scadmm(const std::vector<AgentProblem>& problems, const Objective& objective,
                          const AdmmConfig& cfg, Mode mode) {
  return run_consensus(problems, objective, cfg, mode, Method::scadmm);
}

void save_trace_json(const ConsensusState& state, Method method, Mode mode,
                     const std::string& path) {
  nlohmann::json j;
  j["iterations"] = state.iterations;
  j["residuals"] = state.residual_history;
  j["objectives"] = state.objective_history;
  j["wall_ms"] = state.wall_ms;
  j["mode"] = to_string(mode);
  j["method"] = to_string(method);
  std::ofstream f(path);
  if (!f) throw InvalidArgument("save_trace_json: cannot open " + path);
  f << j.dump(2) << '\n';
}

}  // namespace mrsn::solvers
