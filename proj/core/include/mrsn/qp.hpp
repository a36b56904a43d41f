#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mrsn::qp {

inline constexpr double kInf = 1e30;

/// Weighted linear expression used for L1 (lambda |a.x + b|) and hinge
/// (tau max(0, a.x + b)) penalty terms.
struct PenaltyTerm {
  double weight;
  Eigen::VectorXd a;
  double b;
};

/// Ranged linear constraint lo <= a.x <= hi (equality when lo == hi).
struct LinearRow {
  Eigen::VectorXd a;
  double lo;
  double hi;
};

/// Convex piecewise-quadratic subproblem:
///   min 1/2 x'Px + q'x + sum lambda|a.x+b| + sum tau max(0, a.x+b)
///   s.t. eq/ineq rows, ||x||_inf <= trust_bound.
struct ConvexSubproblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  std::vector<PenaltyTerm> l1_terms;
  std::vector<PenaltyTerm> hinge_terms;
  std::vector<LinearRow> eq_rows;
  std::vector<LinearRow> ineq_rows;
  double trust_bound = kInf;

  int dim() const { return static_cast<int>(q.size()); }
};

/// Standard-form QP: min 1/2 x'Px + q'x  s.t.  l <= Ax <= u.
struct StandardQp {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd l;
  Eigen::VectorXd u;
  int n_orig = 0;  // leading variables that map back to the subproblem's x
};

enum class QpStatus { optimal, max_iter, infeasible };

struct QpSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  // internal iterates retained for warm starting
  Eigen::VectorXd y;
  Eigen::VectorXd z;
};

struct QpSettings {
  double tol = 1e-6;
  int max_iter = 20000;
  double rho = 1.0;
  double sigma = 1e-6;
  double alpha = 1.6;  // over-relaxation
};

/// Exact epigraph encoding: one slack per penalty term. Penalty rows are
/// normalized to unit norm with weights rescaled before entering the QP.
StandardQp reformulate(const ConvexSubproblem& p);

/// Dense operator-splitting QP solver with active-set polish.
QpSolution solve_qp(const StandardQp& qp, const QpSettings& settings = {},
                    const QpSolution* warm = nullptr);

const char* to_string(QpStatus s);

}  // namespace mrsn::qp
