#include "mrsn/oracles.hpp"

#include <cmath>
#include <limits>

#include "mrsn/errors.hpp"

namespace mrsn::oracles {

Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += step;
    xm(i) -= step;
    g(i) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

gp::PosteriorStats dense_posterior(const gp::Dataset& data, const gp::Hyperparams& h,
                                   const Eigen::MatrixX2d& queries) {
  const auto k = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return h.signal_variance *
           std::exp(-(a - b).squaredNorm() / (2.0 * h.length_scale * h.length_scale));
  };
  const Eigen::Index n = data.measurements.size();
  const Eigen::Index m = queries.rows();
  Eigen::MatrixXd kdd(n, n), ksd(m, n), kss(m, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      kdd(i, j) = k(data.locations.row(i), data.locations.row(j));
  kdd.diagonal().array() += h.noise_variance;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) ksd(i, j) = k(queries.row(i), data.locations.row(j));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) kss(i, j) = k(queries.row(i), queries.row(j));

  gp::PosteriorStats out;
  if (n == 0) {
    out.mean = Eigen::VectorXd::Constant(m, h.constant_mean);
    out.covariance = kss;
    return out;
  }
  const Eigen::MatrixXd kdd_inv = kdd.fullPivLu().inverse();
  const Eigen::VectorXd r = data.measurements.array() - h.constant_mean;
  out.mean = Eigen::VectorXd::Constant(m, h.constant_mean) + ksd * kdd_inv * r;
  out.covariance = kss - ksd * kdd_inv * ksd.transpose();
  return out;
}

Eigen::VectorXd active_set_box_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& l, const Eigen::VectorXd& u) {
  const int n = static_cast<int>(q.size());
  if (n > 8) throw InvalidArgument("active_set_box_qp: enumeration limited to n <= 8");
  long combos = 1;
  for (int i = 0; i < n; ++i) combos *= 3;

  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = l;
  for (long mask = 0; mask < combos; ++mask) {
    // digit per variable: 0 = free, 1 = at lower, 2 = at upper
    long rest = mask;
    std::vector<int> kind(static_cast<size_t>(n));
    std::vector<int> free_idx;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      kind[static_cast<size_t>(i)] = static_cast<int>(rest % 3);
      rest /= 3;
      if (kind[static_cast<size_t>(i)] == 0) free_idx.push_back(i);
      else x(i) = kind[static_cast<size_t>(i)] == 1 ? l(i) : u(i);
    }
    const int nf = static_cast<int>(free_idx.size());
    if (nf > 0) {
      Eigen::MatrixXd pf(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (int a = 0; a < nf; ++a) {
        rhs(a) = -q(free_idx[static_cast<size_t>(a)]);
        for (int b = 0; b < nf; ++b)
          pf(a, b) = P(free_idx[static_cast<size_t>(a)], free_idx[static_cast<size_t>(b)]);
        for (int i = 0; i < n; ++i)
          if (kind[static_cast<size_t>(i)] != 0)
            rhs(a) -= P(free_idx[static_cast<size_t>(a)], i) * x(i);
      }
      Eigen::VectorXd xf = pf.fullPivLu().solve(rhs);
      for (int a = 0; a < nf; ++a) x(free_idx[static_cast<size_t>(a)]) = xf(a);
    }
    bool feasible = true;
    for (int i = 0; i < n; ++i)
      if (x(i) < l(i) - 1e-9 || x(i) > u(i) + 1e-9) feasible = false;
    if (!feasible) continue;
    const double obj = 0.5 * x.dot(P * x) + q.dot(x);
    if (obj < best_obj) {
      best_obj = obj;
      best = x;
    }
  }
  return best;
}

double soft_threshold(double v, double k_over_rho) {
  if (v > k_over_rho) return v - k_over_rho;
  if (v < -k_over_rho) return v + k_over_rho;
  return 0.0;
}

}  // namespace mrsn::oracles
