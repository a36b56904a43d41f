#pragma once

#include <Eigen/Dense>
#include <functional>

#include "mrsn/gp.hpp"

namespace mrsn::oracles {

/// Reference routines used by the check suites and the verification tests.
/// They deliberately avoid the production code paths they are compared
/// against: plain dense linear algebra, brute-force enumeration.

/// Central finite differences of a scalar function.
Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double step);

/// GP posterior computed by direct dense evaluation (LU inverse, no jitter).
gp::PosteriorStats dense_posterior(const gp::Dataset& data, const gp::Hyperparams& h,
                                   const Eigen::MatrixX2d& queries);

/// Exact minimizer of a strictly convex box-constrained QP
///   min 1/2 x'Px + q'x  s.t.  l <= x <= u
/// by enumeration of the 3^n active-set assignments. n must be small.
Eigen::VectorXd active_set_box_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& l, const Eigen::VectorXd& u);

/// Closed-form prox of k|x|: argmin k|x| + rho/2 (x - v)^2.
double soft_threshold(double v, double k_over_rho);

}  // namespace mrsn::oracles
