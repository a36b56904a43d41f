#include "mrsn/gp.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mrsn/errors.hpp"

namespace mrsn::gp {

namespace {

Eigen::MatrixXd gram(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b, const Hyperparams& h) {
  const double inv2l2 = 1.0 / (2.0 * h.length_scale * h.length_scale);
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      k(i, j) = h.signal_variance *
                std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv2l2);
  return k;
}

/// Cholesky with escalating diagonal jitter: 1e-8*sv, x10 each retry, cap 1e-2*sv.
Eigen::LLT<Eigen::MatrixXd> chol_jittered(const Eigen::MatrixXd& m, double signal_variance) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = 1e-8 * signal_variance;
  const double cap = 1e-2 * signal_variance;
  while (jitter <= cap) {
    Eigen::MatrixXd jm = m;
    jm.diagonal().array() += jitter;
    llt.compute(jm);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw IllConditionedError("chol_jittered: matrix singular after jitter escalation");
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Log-space parameterization for training: [mean, log sv, log ls, log nv].
Hyperparams unpack(const Eigen::Vector4d& p) {
  Hyperparams h;
  h.constant_mean = p(0);
  h.signal_variance = std::exp(p(1));
  h.length_scale = std::exp(p(2));
  h.noise_variance = std::exp(p(3));
  return h;
}

Eigen::Vector4d pack(const Hyperparams& h) {
  return {h.constant_mean, std::log(h.signal_variance), std::log(h.length_scale),
          std::log(h.noise_variance)};
}

double lml_and_grad(const Dataset& data, const Eigen::Vector4d& p, Eigen::Vector4d* grad) {
  const Hyperparams h = unpack(p);
  const int n = data.size();
  Eigen::MatrixXd kf = gram(data.locations, data.locations, h);
  Eigen::MatrixXd k = kf;
  k.diagonal().array() += h.noise_variance;
  auto llt = chol_jittered(k, h.signal_variance);
  Eigen::VectorXd r = data.measurements.array() - h.constant_mean;
  Eigen::VectorXd alpha = llt.solve(r);
  const double lml =
      -0.5 * r.dot(alpha) - 0.5 * log_det_from_llt(llt) - 0.5 * n * std::log(2.0 * M_PI);
  if (grad) {
    Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd b = alpha * alpha.transpose() - kinv;
    const double l2 = h.length_scale * h.length_scale;
    Eigen::MatrixXd d2(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        d2(i, j) = (data.locations.row(i) - data.locations.row(j)).squaredNorm();
    (*grad)(0) = alpha.sum();
    (*grad)(1) = 0.5 * (b.array() * kf.array()).sum();
    (*grad)(2) = 0.5 * (b.array() * kf.array() * d2.array()).sum() / l2;
    (*grad)(3) = 0.5 * h.noise_variance * b.trace();
  }
  return lml;
}

/// Generalized-least-squares optimum of the constant mean for fixed kernel
/// parameters: argmax over m of the marginal likelihood has the closed form
/// m = (1' K^-1 y) / (1' K^-1 1).
double gls_mean(const Dataset& data, const Hyperparams& h) {
  Eigen::MatrixXd k = gram(data.locations, data.locations, h);
  k.diagonal().array() += h.noise_variance;
  auto llt = chol_jittered(k, h.signal_variance);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(data.size());
  const double denom = ones.dot(llt.solve(ones));
  return ones.dot(llt.solve(data.measurements)) / denom;
}

/// Gradient ascent with backtracking on the step length. The constant mean is
/// profiled out in closed form at every evaluation, so the ascent only has to
/// navigate the three log-scale parameters.
Eigen::Vector4d ascend(const Dataset& data, Eigen::Vector4d p, double* best_lml) {
  constexpr int kMaxIter = 200;
  constexpr double kGradTol = 1e-6;
  auto eval = [&](Eigen::Vector4d& q, Eigen::Vector4d* grad) {
    q(0) = gls_mean(data, unpack(q));
    return lml_and_grad(data, q, grad);
  };
  Eigen::Vector4d g;
  double lml = eval(p, &g);
  double step = 0.1;
  for (int it = 0; it < kMaxIter && g.norm() > kGradTol; ++it) {
    bool improved = false;
    while (step > 1e-14) {
      Eigen::Vector4d cand = p + step * g;
      try {
        Eigen::Vector4d gc;
        double lc = eval(cand, &gc);
        if (lc > lml) {
          p = cand;
          lml = lc;
          g = gc;
          step *= 1.5;
          improved = true;
          break;
        }
      } catch (const IllConditionedError&) {
        // shrink into a factorizable region
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  *best_lml = lml;
  return p;
}

}  // namespace

void Dataset::append(const Eigen::Vector2d& loc, double value) {
  locations.conservativeResize(locations.rows() + 1, Eigen::NoChange);
  locations.row(locations.rows() - 1) = loc.transpose();
  measurements.conservativeResize(measurements.size() + 1);
  measurements(measurements.size() - 1) = value;
}

double kernel(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Hyperparams& h) {
  if (!h.valid()) throw InvalidArgument("kernel: invalid hyperparameters");
  const double d2 = (a - b).squaredNorm();
  return h.signal_variance * std::exp(-d2 / (2.0 * h.length_scale * h.length_scale));
}

double log_marginal_likelihood(const Dataset& data, const Hyperparams& h) {
  return lml_and_grad(data, pack(h), nullptr);
}

Hyperparams train(const Dataset& data, const Hyperparams& init) {
  if (data.size() < 2) throw InvalidArgument("train: need at least 2 data points");
  if (!init.valid()) throw InvalidArgument("train: invalid initial hyperparameters");

  std::mt19937 rng(0x5eed);
  std::normal_distribution<double> perturb(0.0, 0.5);

  const Eigen::Vector4d p0 = pack(init);
  Eigen::Vector4d best_p = p0;
  double best = -std::numeric_limits<double>::infinity();
  constexpr int kStarts = 4;
  for (int s = 0; s < kStarts; ++s) {
    Eigen::Vector4d start = p0;
    if (s > 0) {
      const double y_sd = std::sqrt(std::max(
          1e-12, (data.measurements.array() - data.measurements.mean()).square().mean()));
      start(0) += perturb(rng) * y_sd;
      for (int j = 1; j < 4; ++j) start(j) += perturb(rng);
    }
    try {
      double lml = 0.0;
      Eigen::Vector4d p = ascend(data, start, &lml);
      if (lml > best) {
        best = lml;
        best_p = p;
      }
    } catch (const IllConditionedError&) {
      if (s == 0) throw;
    }
  }
  return unpack(best_p);
}

PosteriorStats predict(const Dataset& data, const Hyperparams& h, const Eigen::MatrixX2d& queries) {
  if (queries.rows() == 0) throw InvalidArgument("predict: queries must be nonempty");
  PosteriorStats out;
  Eigen::MatrixXd kss = gram(queries, queries, h);
  if (data.size() == 0) {
    out.mean = Eigen::VectorXd::Constant(queries.rows(), h.constant_mean);
    out.covariance = kss;
    return out;
  }
  Eigen::MatrixXd kdd = gram(data.locations, data.locations, h);
  kdd.diagonal().array() += h.noise_variance;
  auto llt = chol_jittered(kdd, h.signal_variance);
  Eigen::MatrixXd ksd = gram(queries, data.locations, h);
  Eigen::VectorXd r = data.measurements.array() - h.constant_mean;
  out.mean = Eigen::VectorXd::Constant(queries.rows(), h.constant_mean) + ksd * llt.solve(r);
  out.covariance = kss - ksd * llt.solve(ksd.transpose());
  // symmetrize away factorization round-off
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

double neg_log_det(const Dataset& data, const Hyperparams& h, const Eigen::MatrixX2d& s) {
  PosteriorStats post = predict(data, h, s);
  auto llt = chol_jittered(post.covariance, h.signal_variance);
  return -log_det_from_llt(llt);
}

Eigen::VectorXd grad_neg_log_det(const Dataset& data, const Hyperparams& h,
                                 const Eigen::MatrixX2d& s) {
  const int m = static_cast<int>(s.rows());
  const int n = data.size();
  const double inv_l2 = 1.0 / (h.length_scale * h.length_scale);

  PosteriorStats post = predict(data, h, s);
  auto llt = chol_jittered(post.covariance, h.signal_variance);
  Eigen::MatrixXd ginv = llt.solve(Eigen::MatrixXd::Identity(m, m));

  Eigen::MatrixXd kss = gram(s, s, h);
  Eigen::MatrixXd ksd(m, std::max(n, 0));
  Eigen::MatrixXd a(m, std::max(n, 0));  // K_sd * K_dd^{-1}
  if (n > 0) {
    ksd = gram(s, data.locations, h);
    Eigen::MatrixXd kdd = gram(data.locations, data.locations, h);
    kdd.diagonal().array() += h.noise_variance;
    a = chol_jittered(kdd, h.signal_variance).solve(ksd.transpose()).transpose();
  }

  Eigen::VectorXd grad(2 * m);
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < 2; ++c) {
      // dSigma has nonzero entries only in row/column i.
      Eigen::VectorXd d(m);
      Eigen::VectorXd dkd;  // d k(s_i, x_n) / d s_{i,c}
      if (n > 0) {
        dkd.resize(n);
        for (int t = 0; t < n; ++t)
          dkd(t) = -ksd(i, t) * (s(i, c) - data.locations(t, c)) * inv_l2;
      }
      for (int j = 0; j < m; ++j) {
        double dks = (j == i) ? 0.0 : -kss(i, j) * (s(i, c) - s(j, c)) * inv_l2;
        d(j) = dks;
        if (n > 0) d(j) -= a.row(j).dot(dkd);
      }
      if (n > 0) d(i) *= 2.0;  // both the row-i and column-i cross terms hit the diagonal
      const double tr = 2.0 * ginv.row(i).dot(d) - ginv(i, i) * d(i);
      grad(2 * i + c) = -tr;
    }
  }
  return grad;
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("load_dataset_csv: cannot open " + path);
  Dataset d;
  std::string line;
  std::getline(f, line);  // header
  std::vector<Eigen::Vector3d> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    Eigen::Vector3d row;
    for (int k = 0; k < 3; ++k) {
      if (!std::getline(ss, cell, ',')) throw InvalidArgument("load_dataset_csv: malformed row");
      row(k) = std::stod(cell);
    }
    rows.push_back(row);
  }
  d.locations.resize(static_cast<Eigen::Index>(rows.size()), 2);
  d.measurements.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    d.locations.row(static_cast<Eigen::Index>(k)) << rows[k](0), rows[k](1);
    d.measurements(static_cast<Eigen::Index>(k)) = rows[k](2);
  }
  return d;
}

void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("save_dataset_csv: cannot open " + path);
  f << "x,y,value\n";
  f.precision(17);
  for (int i = 0; i < data.size(); ++i)
    f << data.locations(i, 0) << ',' << data.locations(i, 1) << ',' << data.measurements(i)
      << '\n';
}

}  // namespace mrsn::gp
