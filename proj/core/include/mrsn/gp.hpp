#pragma once

#include <Eigen/Dense>
#include <string>

#include "mrsn/geometry.hpp"

namespace mrsn::gp {

/// Constant-mean squared-exponential GP hyperparameters (isotropic length scale).
struct Hyperparams {
  double constant_mean = 0.0;
  double signal_variance = 1.0;
  double length_scale = 1.0;
  double noise_variance = 0.01;

  bool valid() const {
    return signal_variance > 0.0 && length_scale > 0.0 && noise_variance > 0.0;
  }
};

/// Training data: measurement locations (N x 2, meters) and values (length N).
struct Dataset {
  Eigen::MatrixX2d locations;
  Eigen::VectorXd measurements;

  Dataset() : locations(0, 2), measurements(0) {}

  int size() const { return static_cast<int>(measurements.size()); }
  void append(const Eigen::Vector2d& loc, double value);
};

/// Posterior mean and covariance at a batch of query locations.
struct PosteriorStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Squared-exponential covariance; noise variance is NOT added here.
double kernel(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Hyperparams& h);

/// Log marginal likelihood of the data under h (training covariance includes noise).
double log_marginal_likelihood(const Dataset& data, const Hyperparams& h);

/// Maximum-likelihood hyperparameter fit: multi-start gradient ascent in
/// log-space of the positive parameters. Returned likelihood >= likelihood(init).
Hyperparams train(const Dataset& data, const Hyperparams& init);

/// GP posterior at the query rows. An empty dataset returns the prior.
PosteriorStats predict(const Dataset& data, const Hyperparams& h, const Eigen::MatrixX2d& queries);

/// Sampling metric f0 = -log det of the posterior covariance at s.
double neg_log_det(const Dataset& data, const Hyperparams& h, const Eigen::MatrixX2d& s);

/// Analytic gradient of neg_log_det w.r.t. the flattened query coordinates,
/// ordered agent-major: [s1x, s1y, s2x, s2y, ...].
Eigen::VectorXd grad_neg_log_det(const Dataset& data, const Hyperparams& h,
                                 const Eigen::MatrixX2d& s);

/// CSV round trip, header "x,y,value", row order = acquisition order.
Dataset load_dataset_csv(const std::string& path);
void save_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace mrsn::gp
