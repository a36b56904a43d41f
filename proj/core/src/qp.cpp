#include "mrsn/qp.hpp"

#include <cmath>

#include "mrsn/errors.hpp"

namespace mrsn::qp {

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

/// Primal infeasibility certificate on a dual step direction dy.
bool is_infeasibility_certificate(const StandardQp& qp, const Eigen::VectorXd& dy, double tol) {
  const double dn = inf_norm(dy);
  if (dn < 1e-12) return false;
  Eigen::VectorXd d = dy / dn;
  if (inf_norm(qp.A.transpose() * d) > tol) return false;
  double support = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d(i) > tol) {
      if (qp.u(i) >= kInf) return false;
      support += qp.u(i) * d(i);
    } else if (d(i) < -tol) {
      if (qp.l(i) <= -kInf) return false;
      support += qp.l(i) * d(i);
    }
  }
  return support < -tol;
}

/// KKT solve on the detected active set; returns true if it improved feasibility.
bool polish(const StandardQp& qp, const QpSettings& st, Eigen::VectorXd& x, Eigen::VectorXd& y,
            Eigen::VectorXd& z) {
  const Eigen::Index n = qp.q.size();
  const Eigen::Index m = qp.l.size();
  std::vector<Eigen::Index> lower, upper;
  const double ytol = 1e-9;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (y(i) < -ytol) lower.push_back(i);
    else if (y(i) > ytol) upper.push_back(i);
  }
  const Eigen::Index na = static_cast<Eigen::Index>(lower.size() + upper.size());
  // Factor a lightly regularized KKT matrix for stability, but refine the
  // solution against the exact (unregularized) system so the regularization
  // error does not leak into the active rows: with penalty-scale duals the
  // naive delta * y error would dominate the achievable feasibility.
  Eigen::MatrixXd kkt0 = Eigen::MatrixXd::Zero(n + na, n + na);
  kkt0.topLeftCorner(n, n) = qp.P;
  Eigen::VectorXd rhs(n + na);
  rhs.head(n) = -qp.q;
  Eigen::Index r = 0;
  for (Eigen::Index i : lower) {
    kkt0.block(n + r, 0, 1, n) = qp.A.row(i);
    kkt0.block(0, n + r, n, 1) = qp.A.row(i).transpose();
    rhs(n + r) = qp.l(i);
    ++r;
  }
  for (Eigen::Index i : upper) {
    kkt0.block(n + r, 0, 1, n) = qp.A.row(i);
    kkt0.block(0, n + r, n, 1) = qp.A.row(i).transpose();
    rhs(n + r) = qp.u(i);
    ++r;
  }
  const double delta = 1e-9;
  Eigen::MatrixXd kkt = kkt0;
  kkt.topLeftCorner(n, n).diagonal().array() += delta;
  kkt.bottomRightCorner(na, na).diagonal().array() -= delta;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(kkt);
  if (ldlt.info() != Eigen::Success) return false;
  Eigen::VectorXd sol = ldlt.solve(rhs);
  for (int refine = 0; refine < 3; ++refine) sol += ldlt.solve(rhs - kkt0 * sol);

  Eigen::VectorXd xp = sol.head(n);
  Eigen::VectorXd yp = Eigen::VectorXd::Zero(m);
  r = 0;
  for (Eigen::Index i : lower) yp(i) = sol(n + r), ++r;
  for (Eigen::Index i : upper) yp(i) = sol(n + r), ++r;

  Eigen::VectorXd ax = qp.A * xp;
  Eigen::VectorXd zp = ax.cwiseMax(qp.l).cwiseMin(qp.u);
  const double rp_new = inf_norm(ax - zp);
  const double rd_new = inf_norm(qp.P * xp + qp.q + qp.A.transpose() * yp);
  Eigen::VectorXd z_old = (qp.A * x).cwiseMax(qp.l).cwiseMin(qp.u);
  const double rp_old = inf_norm(qp.A * x - z_old);
  const double rd_old = inf_norm(qp.P * x + qp.q + qp.A.transpose() * y);
  if (rp_new <= rp_old + st.tol && rd_new <= rd_old + st.tol) {
    x = xp;
    y = yp;
    z = zp;
    return true;
  }
  return false;
}

}  // namespace

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iter: return "max-iter";
    case QpStatus::infeasible: return "infeasible";
  }
  return "?";
}

StandardQp reformulate(const ConvexSubproblem& p) {
  const int n = p.dim();
  const int nl1 = static_cast<int>(p.l1_terms.size());
  const int nh = static_cast<int>(p.hinge_terms.size());
  const int nv = n + nl1 + nh;

  // rows: eq + ineq + trust box + 2 per l1 + 2 per hinge
  const int m_rows = static_cast<int>(p.eq_rows.size() + p.ineq_rows.size()) + n + 2 * nl1 +
                     2 * nh;

  StandardQp qp;
  qp.n_orig = n;
  qp.P = Eigen::MatrixXd::Zero(nv, nv);
  qp.P.topLeftCorner(n, n) = p.P;
  qp.q = Eigen::VectorXd::Zero(nv);
  qp.q.head(n) = p.q;
  qp.A = Eigen::MatrixXd::Zero(m_rows, nv);
  qp.l = Eigen::VectorXd::Constant(m_rows, -kInf);
  qp.u = Eigen::VectorXd::Constant(m_rows, kInf);

  int r = 0;
  for (const auto& row : p.eq_rows) {
    qp.A.block(r, 0, 1, n) = row.a.transpose();
    qp.l(r) = row.lo;
    qp.u(r) = row.hi;
    ++r;
  }
  for (const auto& row : p.ineq_rows) {
    qp.A.block(r, 0, 1, n) = row.a.transpose();
    qp.l(r) = row.lo;
    qp.u(r) = row.hi;
    ++r;
  }
  for (int j = 0; j < n; ++j) {
    qp.A(r, j) = 1.0;
    qp.l(r) = -p.trust_bound;
    qp.u(r) = p.trust_bound;
    ++r;
  }
  for (int j = 0; j < nl1; ++j) {
    const auto& t = p.l1_terms[j];
    const double s = t.a.norm();
    const int slack = n + j;
    qp.q(slack) = t.weight * (s > 0.0 ? s : 1.0);
    Eigen::VectorXd a = s > 0.0 ? Eigen::VectorXd(t.a / s) : Eigen::VectorXd(t.a);
    const double b = s > 0.0 ? t.b / s : t.b;
    // t >= a.x + b  and  t >= -(a.x + b)
    qp.A.block(r, 0, 1, n) = a.transpose();
    qp.A(r, slack) = -1.0;
    qp.u(r) = -b;
    ++r;
    qp.A.block(r, 0, 1, n) = -a.transpose();
    qp.A(r, slack) = -1.0;
    qp.u(r) = b;
    ++r;
  }
  for (int j = 0; j < nh; ++j) {
    const auto& t = p.hinge_terms[j];
    const double s = t.a.norm();
    const int slack = n + nl1 + j;
    qp.q(slack) = t.weight * (s > 0.0 ? s : 1.0);
    Eigen::VectorXd a = s > 0.0 ? Eigen::VectorXd(t.a / s) : Eigen::VectorXd(t.a);
    const double b = s > 0.0 ? t.b / s : t.b;
    // t >= 0  and  t >= a.x + b
    qp.A(r, slack) = 1.0;
    qp.l(r) = 0.0;
    ++r;
    qp.A.block(r, 0, 1, n) = a.transpose();
    qp.A(r, slack) = -1.0;
    qp.u(r) = -b;
    ++r;
  }
  return qp;
}

QpSolution solve_qp(const StandardQp& qp, const QpSettings& st, const QpSolution* warm) {
  const Eigen::Index n = qp.q.size();
  const Eigen::Index m = qp.l.size();
  if ((qp.l.array() > qp.u.array()).any())
    throw InvalidArgument("solve_qp: inconsistent bounds l > u");

  QpSolution sol;
  sol.x = Eigen::VectorXd::Zero(n);
  sol.y = Eigen::VectorXd::Zero(m);
  sol.z = Eigen::VectorXd::Zero(m);
  // Warm-start the primal only. The duals of the previous subproblem in a
  // successive-convexification sequence can be huge (penalty-scale) and sit
  // on rows whose activity has flipped; reusing them stalls the iteration,
  // while the primal iterate alone recovers most of the benefit.
  if (warm && warm->x.size() == n) {
    sol.x = warm->x;
    sol.z = (qp.A * sol.x).cwiseMax(qp.l).cwiseMin(qp.u);
  } else {
    sol.z = Eigen::VectorXd::Zero(m).cwiseMax(qp.l).cwiseMin(qp.u);
  }

  // Per-row step sizes: rows that pin a value (l == u) converge much faster
  // with a stiffer penalty, as is standard for splitting solvers.
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(m, st.rho);
  for (Eigen::Index i = 0; i < m; ++i)
    if (qp.u(i) - qp.l(i) < 1e-9) rho(i) = 1e3 * st.rho;

  // Condensed iteration matrix: P + sigma I + A' diag(rho) A, factored once.
  Eigen::MatrixXd cond = qp.P;
  cond.diagonal().array() += st.sigma;
  cond.noalias() += qp.A.transpose() * rho.asDiagonal() * qp.A;
  Eigen::LLT<Eigen::MatrixXd> llt(cond);
  if (llt.info() != Eigen::Success)
    throw IllConditionedError("solve_qp: iteration matrix factorization failed");

  Eigen::VectorXd rhs(n);
  Eigen::VectorXd y_at_last_check = sol.y;
  constexpr int kCheckEvery = 25;

  for (int k = 1; k <= st.max_iter; ++k) {
    rhs = st.sigma * sol.x - qp.q;
    rhs.noalias() += qp.A.transpose() * (rho.cwiseProduct(sol.z) - sol.y);
    Eigen::VectorXd x_t = llt.solve(rhs);
    Eigen::VectorXd z_t = qp.A * x_t;

    sol.x = st.alpha * x_t + (1.0 - st.alpha) * sol.x;
    Eigen::VectorXd z_relaxed = st.alpha * z_t + (1.0 - st.alpha) * sol.z;
    Eigen::VectorXd z_new =
        (z_relaxed + sol.y.cwiseQuotient(rho)).cwiseMax(qp.l).cwiseMin(qp.u);
    sol.y += rho.cwiseProduct(z_relaxed - z_new);
    sol.z = z_new;
    sol.iterations = k;

    if (k % kCheckEvery == 0 || k == st.max_iter) {
      Eigen::VectorXd ax = qp.A * sol.x;
      Eigen::VectorXd px = qp.P * sol.x;
      Eigen::VectorXd aty = qp.A.transpose() * sol.y;
      const double rp = inf_norm(ax - sol.z);
      const double rd = inf_norm(px + qp.q + aty);
      const double eps_p = st.tol + st.tol * std::max(inf_norm(ax), inf_norm(sol.z));
      const double eps_d =
          st.tol + st.tol * std::max({inf_norm(px), inf_norm(qp.q), inf_norm(aty)});
      if (rp <= eps_p && rd <= eps_d) {
        sol.status = QpStatus::optimal;
        polish(qp, st, sol.x, sol.y, sol.z);
        break;
      }
      if (is_infeasibility_certificate(qp, sol.y - y_at_last_check, st.tol)) {
        sol.status = QpStatus::infeasible;
        break;
      }
      y_at_last_check = sol.y;
      // The slow tail of the splitting iteration is usually spent refining
      // duals on an already-stable active set; periodically try the direct
      // active-set solve and exit early if it already meets the tolerance.
      if (k >= 100 && k % 100 == 0) {
        Eigen::VectorXd xc = sol.x, yc = sol.y, zc = sol.z;
        if (polish(qp, st, xc, yc, zc)) {
          Eigen::VectorXd axc = qp.A * xc;
          Eigen::VectorXd pxc = qp.P * xc;
          Eigen::VectorXd atyc = qp.A.transpose() * yc;
          const double rpc = inf_norm(axc - zc);
          const double rdc = inf_norm(pxc + qp.q + atyc);
          const double eps_pc = st.tol + st.tol * std::max(inf_norm(axc), inf_norm(zc));
          const double eps_dc =
              st.tol + st.tol * std::max({inf_norm(pxc), inf_norm(qp.q), inf_norm(atyc)});
          if (rpc <= eps_pc && rdc <= eps_dc) {
            sol.x = xc;
            sol.y = yc;
            sol.z = zc;
            sol.status = QpStatus::optimal;
            break;
          }
        }
      }
    }
  }
  sol.objective = 0.5 * sol.x.dot(qp.P * sol.x) + qp.q.dot(sol.x);
  return sol;
}

}  // namespace mrsn::qp
