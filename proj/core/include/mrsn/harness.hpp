#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mrsn/admm.hpp"
#include "mrsn/geometry.hpp"
#include "mrsn/gp.hpp"
#include "mrsn/vehicle.hpp"

namespace mrsn::harness {

/// GP prior used to draw the synthetic ground-truth field.
struct GroundTruthConfig {
  double constant_mean = 20.0;
  double signal_variance = 0.2;
  double length_scale = 30.0;
  double resolution = 1.0;  // grid spacing, meters
};

struct ExperimentConfig {
  geometry::Rect domain;
  int num_robots = 5;
  int horizon = 10;
  double dt = 0.2;
  int measurement_steps = 15;
  vehicle::ControlBounds bounds;
  vehicle::CostWeights weights;
  solvers::AdmmConfig admm;
  std::uint64_t seed = 1;
  solvers::Method method = solvers::Method::scadmm;
  solvers::Mode mode = solvers::Mode::centralized;
  double eval_resolution = 1.0;
  double safety_eps = 0.5;  // Voronoi shrink threshold
  double noise_sd = 0.1;
  GroundTruthConfig ground_truth;
  std::string ground_truth_csv;  // optional: fit the field to scattered readings
  bool train_hyperparams = false;
  int retrain_every = 0;  // 0: train only on the step-0 measurements (if training at all)
};

/// Dense grid sample of the scalar field; queried by bilinear interpolation.
struct GroundTruthField {
  geometry::Rect domain;
  double resolution = 1.0;
  int nx = 0;
  int ny = 0;
  Eigen::MatrixXd values;  // ny x nx, row = y index
  std::uint64_t seed = 0;
  gp::Hyperparams hyperparams;  // generator prior (or fitted model in CSV mode)

  double at(const Eigen::Vector2d& s) const;
};

struct StepMetrics {
  int step = 0;
  double alpv = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double wall_ms = 0.0;  // solver wall time for the step (0 at step 0)
};

struct MetricsRecord {
  std::vector<StepMetrics> steps;
  bool completed = true;
  std::string error;
  // poses of each robot at every measurement step (steps+1 entries)
  std::vector<std::vector<Eigen::Vector2d>> positions;
  std::vector<std::vector<double>> headings;
  // controls applied per step per robot, for feasibility audits
  std::vector<std::vector<std::vector<vehicle::ControlInput>>> applied_controls;
  // solver trace of the first measurement step's solve
  solvers::ConsensusState first_solve;
  gp::Dataset dataset;
};

GroundTruthField generate_ground_truth(std::uint64_t seed, const ExperimentConfig& cfg);

/// Noisy field reading at s (bilinear interpolation plus Gaussian noise).
double measure(const GroundTruthField& field, const Eigen::Vector2d& s, double noise_sd,
               std::mt19937_64& rng);

/// Evaluation metrics over a grid: mean log posterior variance, root mean
/// squared error of the mean, and maximum absolute error.
void metrics(const gp::PosteriorStats& pred, const Eigen::VectorXd& truth, double& alpv,
             double& rmse, double& mae);

MetricsRecord run_episode(const ExperimentConfig& cfg,
                          const std::string& out_dir = std::string(), int run_index = 0);

struct BatchReport {
  std::vector<MetricsRecord> runs;
  // quartiles of the final-step metrics across runs: [q1, median, q3]
  std::array<double, 3> alpv_quartiles{};
  std::array<double, 3> rmse_quartiles{};
  std::array<double, 3> mae_quartiles{};
  double median_solve_wall_ms = 0.0;
  int failures = 0;
};

BatchReport run_batch(const ExperimentConfig& cfg, int n_runs,
                      const std::string& out_dir = std::string());

/// Evaluation grid rows (x varies fastest).
Eigen::MatrixX2d eval_grid(const geometry::Rect& domain, double resolution);

/// JSON config file mirroring ExperimentConfig field names; missing keys keep defaults.
ExperimentConfig load_config(const std::string& path);

void write_metrics_csv(const BatchReport& report, const std::string& path);
void write_field_csv(const gp::PosteriorStats& pred, const Eigen::MatrixX2d& grid,
                     const std::string& path);

}  // namespace mrsn::harness
