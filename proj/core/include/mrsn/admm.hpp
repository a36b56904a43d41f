#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "mrsn/geometry.hpp"
#include "mrsn/qp.hpp"
#include "mrsn/vehicle.hpp"

namespace mrsn::solvers {

/// Per-agent horizon data: dynamics start, movement region, bounds, cost.
struct AgentProblem {
  int index = 0;
  vehicle::RobotState start_state;
  vehicle::ControlInput u_prev;
  geometry::Polytope region;
  vehicle::ControlBounds bounds;
  vehicle::CostWeights weights;
  int horizon = 10;
  double dt = 0.2;
};

/// Horizon decision variables of one agent. Flattened layout is
/// [states row-major (H x 3), controls row-major (H x 2)], length 5H.
struct TrajectoryVars {
  Eigen::MatrixX3d states;
  Eigen::MatrixX2d controls;

  static TrajectoryVars hold(const vehicle::RobotState& s, int horizon);
  static TrajectoryVars unflatten(const Eigen::VectorXd& w, int horizon);
  Eigen::VectorXd flatten() const;
  Eigen::Vector2d final_position() const;
  int horizon() const { return static_cast<int>(states.rows()); }
};

/// Trust-region machinery parameters for the convexified steps.
struct ScConfig {
  double lambda = 1e6;
  double tau = 1e6;
  double beta_fail = 0.5;
  double beta_succ = 2.0;
  double eps0 = 1.0;
  double eps1 = 1e2;
  double eps2 = 1e3;
  double r_init = 1.0;
  double r_min = 1e-6;
  double r_max = 1.0;
};

struct AdmmConfig {
  double rho = 0.1;
  double lipschitz = 0.01;
  double eps_res = 1e-3;
  int k_max = 100;
  ScConfig sc;
  geometry::Rect domain;
  qp::QpSettings qp_settings;
  // inward tightening of box/region rows inside the subproblem QPs, so the
  // returned iterates satisfy the original inequalities strictly
  double constraint_margin = 1e-5;
  int ladmm_inner_max = 50;
  double ladmm_inner_tol = 1e-6;
  double dynamics_tol = 1e-6;  // feasibility target of the L-ADMM inner loop
};

enum class Mode { centralized, distributed };
enum class Method { ladmm, scadmm };

const char* to_string(Mode m);
const char* to_string(Method m);

/// Consensus iterate history of one ADMM run.
struct ConsensusState {
  Eigen::VectorXd z;
  Eigen::VectorXd mu;
  std::vector<TrajectoryVars> w;
  std::vector<double> residual_history;
  std::vector<double> objective_history;
  int iterations = 0;
  bool converged = false;
  double wall_ms = 0.0;
};

/// Evaluations of the sampling metric f0 over the stacked final positions.
struct Objective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

/// Constraint set C_{i,t} of one agent: dynamics equalities g (3H rows) and
/// linear inequalities h (4H control-box rows, then H x facet region rows).
struct ConstraintSet {
  AgentProblem problem;

  Eigen::VectorXd g(const Eigen::VectorXd& w) const;
  Eigen::MatrixXd g_jacobian(const Eigen::VectorXd& w) const;
  Eigen::VectorXd h(const Eigen::VectorXd& w) const;
  /// Ranged rows over the flattened w equivalent to h <= 0, tightened inward
  /// by margin.
  std::vector<qp::LinearRow> linear_ineq_rows(double margin) const;
};

ConstraintSet build_agent_constraints(const AgentProblem& p);

/// Single linearized-ADMM w-minimization (Eq.-10a-style proximal subproblem),
/// solved to dynamics feasibility by an inner successive-convexification loop.
TrajectoryVars ladmm_w_step(const AgentProblem& p, const Eigen::Vector2d& target, double rho,
                            const TrajectoryVars& warm, const AdmmConfig& cfg,
                            qp::QpSolution* qp_warm = nullptr);

/// Consensus update: z = v - (grad + mu)/(rho + L), clamped to the domain.
Eigen::VectorXd z_step(const Eigen::VectorXd& v, const Eigen::VectorXd& mu, double rho, double L,
                       const Eigen::VectorXd& grad, const geometry::Rect& domain);

/// Dual ascent: mu + rho (z - v).
Eigen::VectorXd dual_step(const Eigen::VectorXd& mu, const Eigen::VectorXd& z,
                          const Eigen::VectorXd& v, double rho);

/// Four-case trust-region adjustment on the actual-vs-predicted cost gap.
/// Returns (step accepted, new radius clamped to [r_min, r_max]).
std::pair<bool, double> apply_trust_rule(double delta, double radius, const ScConfig& sc);

struct ScStepResult {
  TrajectoryVars w;
  double delta = 0.0;
  bool accepted = false;
  double radius = 0.0;
};

/// One convexified w-step: penalized linearized subproblem inside the trust
/// region, followed by the four-case radius adjustment rule.
ScStepResult scadmm_w_step(const AgentProblem& p, const TrajectoryVars& w_prev,
                           const Eigen::Vector2d& target, double rho, double trust_radius,
                           const AdmmConfig& cfg, qp::QpSolution* qp_warm = nullptr);

ConsensusState run_ladmm(const std::vector<AgentProblem>& problems, const Objective& objective,
                         const AdmmConfig& cfg, Mode mode);

ConsensusState run_scadmm(const std::vector<AgentProblem>& problems, const Objective& objective,
                          const AdmmConfig& cfg, Mode mode);

/// Trace export: {iterations, residuals[], objectives[], wall_ms, mode, method}.
void save_trace_json(const ConsensusState& state, Method method, Mode mode,
                     const std::string& path);

}  // namespace mrsn::solvers
