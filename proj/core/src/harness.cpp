#include "mrsn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mrsn/errors.hpp"

namespace mrsn::harness {

namespace {

// Planned positions drift from applied ones by at most H * dynamics-residual;
// plan inside cells shrunk by this extra amount so the applied trajectory
// keeps the configured separation.
constexpr double kDriftAllowance = 0.01;

std::array<double, 3> quartiles(std::vector<double> v) {
  std::array<double, 3> out{0.0, 0.0, 0.0};
  if (v.empty()) return out;
  std::sort(v.begin(), v.end());
  auto interp = [&](double p) {
    const double idx = p * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(idx));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
  };
  out = {interp(0.25), interp(0.5), interp(0.75)};
  return out;
}

Eigen::MatrixX2d grid_points(const geometry::Rect& domain, double resolution, int& nx, int& ny) {
  nx = static_cast<int>(std::floor((domain.x_max - domain.x_min) / resolution + 1e-9)) + 1;
  ny = static_cast<int>(std::floor((domain.y_max - domain.y_min) / resolution + 1e-9)) + 1;
  Eigen::MatrixX2d pts(static_cast<Eigen::Index>(nx) * ny, 2);
  Eigen::Index r = 0;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      pts.row(r++) << domain.x_min + ix * resolution, domain.y_min + iy * resolution;
  return pts;
}

gp::Hyperparams model_hyperparams(const ExperimentConfig& cfg, const GroundTruthField& field) {
  gp::Hyperparams h = field.hyperparams;
  h.noise_variance = std::max(cfg.noise_sd * cfg.noise_sd, 1e-8);
  return h;
}

solvers::Objective make_objective(const gp::Dataset& data, const gp::Hyperparams& h) {
  auto unstack = [](const Eigen::VectorXd& v) {
    Eigen::MatrixX2d s(v.size() / 2, 2);
    for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = v.segment<2>(2 * i).transpose();
    return s;
  };
  solvers::Objective obj;
  obj.value = [data, h, unstack](const Eigen::VectorXd& v) {
    return gp::neg_log_det(data, h, unstack(v));
  };
  obj.gradient = [data, h, unstack](const Eigen::VectorXd& v) {
    return gp::grad_neg_log_det(data, h, unstack(v));
  };
  return obj;
}

}  // namespace

double GroundTruthField::at(const Eigen::Vector2d& s) const {
  if (!domain.contains(s, 1e-9)) throw InvalidArgument("GroundTruthField: query outside domain");
  const double fx = std::clamp((s.x() - domain.x_min) / resolution, 0.0, double(nx - 1));
  const double fy = std::clamp((s.y() - domain.y_min) / resolution, 0.0, double(ny - 1));
  const int ix = std::min(static_cast<int>(fx), nx - 2 >= 0 ? nx - 2 : 0);
  const int iy = std::min(static_cast<int>(fy), ny - 2 >= 0 ? ny - 2 : 0);
  const double tx = fx - ix;
  const double ty = fy - iy;
  const int ix1 = std::min(ix + 1, nx - 1);
  const int iy1 = std::min(iy + 1, ny - 1);
  return values(iy, ix) * (1 - tx) * (1 - ty) + values(iy, ix1) * tx * (1 - ty) +
         values(iy1, ix) * (1 - tx) * ty + values(iy1, ix1) * tx * ty;
}

Eigen::MatrixX2d eval_grid(const geometry::Rect& domain, double resolution) {
  int nx = 0, ny = 0;
  return grid_points(domain, resolution, nx, ny);
}

GroundTruthField generate_ground_truth(std::uint64_t seed, const ExperimentConfig& cfg) {
  GroundTruthField field;
  field.domain = cfg.domain;
  field.resolution = cfg.ground_truth.resolution;
  field.seed = seed;
  Eigen::MatrixX2d pts = grid_points(cfg.domain, field.resolution, field.nx, field.ny);
  if (field.nx < 20 || field.ny < 20)
    throw InvalidArgument("generate_ground_truth: grid must be at least 20x20");

  gp::Hyperparams h;
  h.constant_mean = cfg.ground_truth.constant_mean;
  h.signal_variance = cfg.ground_truth.signal_variance;
  h.length_scale = cfg.ground_truth.length_scale;
  h.noise_variance = 1e-8;

  Eigen::VectorXd vals;
  if (!cfg.ground_truth_csv.empty()) {
    gp::Dataset data = gp::load_dataset_csv(cfg.ground_truth_csv);
    if (data.size() < 3)
      throw InvalidArgument("generate_ground_truth: CSV needs at least 3 points");
    gp::Hyperparams init = h;
    init.constant_mean = data.measurements.mean();
    init.noise_variance = 1e-2;
    field.hyperparams = gp::train(data, init);
    vals = gp::predict(data, field.hyperparams, pts).mean;
  } else {
    field.hyperparams = h;
    Eigen::MatrixXd k(pts.rows(), pts.rows());
    const double inv2l2 = 1.0 / (2.0 * h.length_scale * h.length_scale);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double kk =
            h.signal_variance * std::exp(-(pts.row(i) - pts.row(j)).squaredNorm() * inv2l2);
        k(i, j) = kk;
        k(j, i) = kk;
      }
    k.diagonal().array() += 1e-8 * h.signal_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success)
      throw IllConditionedError("generate_ground_truth: prior Gram not factorizable");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd xi(pts.rows());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
    vals = Eigen::VectorXd::Constant(pts.rows(), h.constant_mean) +
           llt.matrixL().toDenseMatrix() * xi;
  }
  field.values.resize(field.ny, field.nx);
  Eigen::Index r = 0;
  for (int iy = 0; iy < field.ny; ++iy)
    for (int ix = 0; ix < field.nx; ++ix) field.values(iy, ix) = vals(r++);
  return field;
}

double measure(const GroundTruthField& field, const Eigen::Vector2d& s, double noise_sd,
               std::mt19937_64& rng) {
  const double value = field.at(s);
  std::normal_distribution<double> normal(0.0, 1.0);
  return value + noise_sd * normal(rng);
}

void metrics(const gp::PosteriorStats& pred, const Eigen::VectorXd& truth, double& alpv,
             double& rmse, double& mae) {
  if (pred.mean.size() != truth.size())
    throw InvalidArgument("metrics: prediction/truth size mismatch");
  const Eigen::VectorXd var = pred.covariance.diagonal().cwiseMax(1e-300);
  alpv = var.array().log().mean();
  const Eigen::VectorXd err = pred.mean - truth;
  rmse = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
  mae = err.cwiseAbs().maxCoeff();
}

MetricsRecord run_episode(const ExperimentConfig& cfg, const std::string& out_dir,
                          int run_index) {
  if (cfg.num_robots < 1 || cfg.horizon < 1 || cfg.measurement_steps < 0)
    throw InvalidArgument("run_episode: invalid config");
  MetricsRecord rec;

  GroundTruthField field = generate_ground_truth(cfg.seed, cfg);
  std::mt19937_64 pose_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::mt19937_64 meas_rng(cfg.seed * 0xbf58476d1ce4e5b9ULL + 2);

  // initial poses: uniform positions with >= 2 m pairwise separation
  std::uniform_real_distribution<double> ux(cfg.domain.x_min, cfg.domain.x_max);
  std::uniform_real_distribution<double> uy(cfg.domain.y_min, cfg.domain.y_max);
  std::uniform_real_distribution<double> uh(-M_PI, M_PI);
  std::vector<vehicle::RobotState> robots;
  while (static_cast<int>(robots.size()) < cfg.num_robots) {
    Eigen::Vector2d cand(ux(pose_rng), uy(pose_rng));
    bool ok = true;
    for (const auto& r : robots)
      if ((cand - r.position()).norm() < 2.0) ok = false;
    if (ok) robots.emplace_back(cand.x(), cand.y(), uh(pose_rng));
  }
  std::vector<vehicle::ControlInput> u_prev(static_cast<size_t>(cfg.num_robots));  // zero

  gp::Hyperparams model_h = model_hyperparams(cfg, field);
  gp::Dataset data;

  const Eigen::MatrixX2d grid = eval_grid(cfg.domain, cfg.eval_resolution);
  Eigen::VectorXd truth(grid.rows());
  for (Eigen::Index i = 0; i < grid.rows(); ++i) truth(i) = field.at(grid.row(i));

  auto record_step = [&](int step, double wall_ms) {
    gp::PosteriorStats pred = gp::predict(data, model_h, grid);
    StepMetrics m;
    m.step = step;
    m.wall_ms = wall_ms;
    metrics(pred, truth, m.alpv, m.rmse, m.mae);
    rec.steps.push_back(m);
    if (!out_dir.empty())
      write_field_csv(pred, grid,
                      out_dir + "/field_" + std::to_string(run_index) + "_" +
                          std::to_string(step) + ".csv");
  };
  auto snapshot_positions = [&] {
    std::vector<Eigen::Vector2d> pos;
    std::vector<double> heads;
    for (const auto& r : robots) {
      pos.push_back(r.position());
      heads.push_back(r.heading);
    }
    rec.positions.push_back(pos);
    rec.headings.push_back(heads);
  };

  record_step(0, 0.0);
  snapshot_positions();

  solvers::AdmmConfig admm = cfg.admm;
  admm.domain = cfg.domain;

  try {
    for (int step = 1; step <= cfg.measurement_steps; ++step) {
      // Take one measurement per robot at the current poses, then plan.
      for (const auto& r : robots)
        data.append(r.position(), measure(field, r.position(), cfg.noise_sd, meas_rng));
      if (cfg.train_hyperparams &&
          (step == 1 || (cfg.retrain_every > 0 && (step - 1) % cfg.retrain_every == 0)))
        model_h = gp::train(data, model_h);

      Eigen::MatrixX2d positions(cfg.num_robots, 2);
      for (int i = 0; i < cfg.num_robots; ++i) positions.row(i) = robots[i].position();

      std::vector<solvers::AgentProblem> problems(static_cast<size_t>(cfg.num_robots));
      for (int i = 0; i < cfg.num_robots; ++i) {
        geometry::Polytope cell = geometry::voronoi_cell(i, positions, cfg.domain);
        double eps = cfg.safety_eps + kDriftAllowance;
        geometry::Polytope region = geometry::shrink(cell, eps);
        while (!geometry::contains(region, positions.row(i), 1e-9) && eps > 1e-3) {
          eps *= 0.5;
          region = geometry::shrink(cell, eps);
        }
        auto& p = problems[static_cast<size_t>(i)];
        p.index = i;
        p.start_state = robots[static_cast<size_t>(i)];
        p.u_prev = u_prev[static_cast<size_t>(i)];
        p.region = region;
        p.bounds = cfg.bounds;
        p.weights = cfg.weights;
        p.horizon = cfg.horizon;
        p.dt = cfg.dt;
      }

      solvers::Objective obj = make_objective(data, model_h);
      solvers::ConsensusState state =
          cfg.method == solvers::Method::ladmm ? solvers::run_ladmm(problems, obj, admm, cfg.mode)
                                               : solvers::run_scadmm(problems, obj, admm, cfg.mode);
      if (step == 1) rec.first_solve = state;

      // Before executing, tighten each trajectory's dynamics residual (the
      // sequential-convexification steps only drive it to the exact-penalty
      // scale). One proximal trajectory solve at the solver's final target
      // keeps the applied rollout within the planner's drift allowance.
      if (cfg.method == solvers::Method::scadmm) {
        for (int i = 0; i < cfg.num_robots; ++i) {
          const auto iu = static_cast<size_t>(i);
          const Eigen::Vector2d target =
              state.z.segment<2>(2 * i) + state.mu.segment<2>(2 * i) / admm.rho;
          try {
            state.w[iu] =
                solvers::ladmm_w_step(problems[iu], target, admm.rho, state.w[iu], admm);
          } catch (const SubproblemFailure&) {
            // keep the unrefined trajectory; it is feasible, just less exact
          }
        }
      }

      std::vector<std::vector<vehicle::ControlInput>> step_controls;
      for (int i = 0; i < cfg.num_robots; ++i) {
        const auto& w = state.w[static_cast<size_t>(i)];
        std::vector<vehicle::ControlInput> controls(static_cast<size_t>(cfg.horizon));
        for (int j = 0; j < cfg.horizon; ++j)
          controls[static_cast<size_t>(j)] = {w.controls(j, 0), w.controls(j, 1)};
        auto rolled = vehicle::rollout(robots[static_cast<size_t>(i)], controls, cfg.dt);
        robots[static_cast<size_t>(i)] = rolled.back();
        u_prev[static_cast<size_t>(i)] = controls.back();
        step_controls.push_back(std::move(controls));
      }
      rec.applied_controls.push_back(std::move(step_controls));

      record_step(step, state.wall_ms);
      snapshot_positions();
    }
  } catch (const std::exception& e) {
    rec.completed = false;
    rec.error = e.what();
  }
  rec.dataset = data;
  return rec;
}

BatchReport run_batch(const ExperimentConfig& cfg, int n_runs, const std::string& out_dir) {
  if (n_runs < 1) throw InvalidArgument("run_batch: n_runs must be >= 1");
  BatchReport report;
  std::vector<double> alpv, rmse, mae, walls;
  for (int r = 0; r < n_runs; ++r) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
    MetricsRecord rec = run_episode(run_cfg, out_dir, r);
    if (!rec.completed) ++report.failures;
    if (!rec.steps.empty()) {
      const auto& last = rec.steps.back();
      alpv.push_back(last.alpv);
      rmse.push_back(last.rmse);
      mae.push_back(last.mae);
      for (const auto& s : rec.steps)
        if (s.step > 0) walls.push_back(s.wall_ms);
    }
    if (!out_dir.empty())
      solvers::save_trace_json(rec.first_solve, cfg.method, cfg.mode,
                               out_dir + "/trace_" + std::to_string(r) + ".json");
    report.runs.push_back(std::move(rec));
  }
  report.alpv_quartiles = quartiles(alpv);
  report.rmse_quartiles = quartiles(rmse);
  report.mae_quartiles = quartiles(mae);
  report.median_solve_wall_ms = quartiles(walls)[1];
  if (!out_dir.empty()) write_metrics_csv(report, out_dir + "/metrics.csv");
  return report;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("load_config: cannot open " + path);
  nlohmann::json j;
  f >> j;

  ExperimentConfig cfg;
  if (j.contains("domain")) {
    const auto& d = j["domain"];
    cfg.domain.x_min = d.value("x_min", cfg.domain.x_min);
    cfg.domain.x_max = d.value("x_max", cfg.domain.x_max);
    cfg.domain.y_min = d.value("y_min", cfg.domain.y_min);
    cfg.domain.y_max = d.value("y_max", cfg.domain.y_max);
  }
  cfg.num_robots = j.value("num_robots", cfg.num_robots);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.dt = j.value("dt", cfg.dt);
  cfg.measurement_steps = j.value("measurement_steps", cfg.measurement_steps);
  if (j.contains("bounds")) {
    const auto& b = j["bounds"];
    cfg.bounds.v_min = b.value("v_min", cfg.bounds.v_min);
    cfg.bounds.v_max = b.value("v_max", cfg.bounds.v_max);
    cfg.bounds.omega_min = b.value("omega_min", cfg.bounds.omega_min);
    cfg.bounds.omega_max = b.value("omega_max", cfg.bounds.omega_max);
  }
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (w.contains("Q")) {
      auto q = w["Q"].get<std::vector<double>>();
      cfg.weights.Q = Eigen::Vector2d(q.at(0), q.at(1)).asDiagonal();
    }
    if (w.contains("R")) {
      auto r = w["R"].get<std::vector<double>>();
      cfg.weights.R = Eigen::Vector2d(r.at(0), r.at(1)).asDiagonal();
    }
  }
  if (j.contains("admm")) {
    const auto& a = j["admm"];
    cfg.admm.rho = a.value("rho", cfg.admm.rho);
    cfg.admm.lipschitz = a.value("lipschitz", cfg.admm.lipschitz);
    cfg.admm.eps_res = a.value("eps_res", cfg.admm.eps_res);
    cfg.admm.k_max = a.value("k_max", cfg.admm.k_max);
    if (a.contains("sc")) {
      const auto& s = a["sc"];
      auto& sc = cfg.admm.sc;
      sc.lambda = s.value("lambda", sc.lambda);
      sc.tau = s.value("tau", sc.tau);
      sc.beta_fail = s.value("beta_fail", sc.beta_fail);
      sc.beta_succ = s.value("beta_succ", sc.beta_succ);
      sc.eps0 = s.value("eps0", sc.eps0);
      sc.eps1 = s.value("eps1", sc.eps1);
      sc.eps2 = s.value("eps2", sc.eps2);
      sc.r_init = s.value("r_init", sc.r_init);
      sc.r_min = s.value("r_min", sc.r_min);
      sc.r_max = s.value("r_max", sc.r_max);
    }
  }
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("method")) {
    const std::string m = j["method"];
    if (m == "ladmm") cfg.method = solvers::Method::ladmm;
    else if (m == "scadmm") cfg.method = solvers::Method::scadmm;
    else throw InvalidArgument("load_config: unknown method " + m);
  }
  if (j.contains("mode")) {
    const std::string m = j["mode"];
    if (m == "central" || m == "centralized") cfg.mode = solvers::Mode::centralized;
    else if (m == "distributed") cfg.mode = solvers::Mode::distributed;
    else throw InvalidArgument("load_config: unknown mode " + m);
  }
  cfg.eval_resolution = j.value("eval_resolution", cfg.eval_resolution);
  cfg.safety_eps = j.value("safety_eps", cfg.safety_eps);
  cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
  if (j.contains("ground_truth")) {
    const auto& g = j["ground_truth"];
    cfg.ground_truth.constant_mean = g.value("constant_mean", cfg.ground_truth.constant_mean);
    cfg.ground_truth.signal_variance =
        g.value("signal_variance", cfg.ground_truth.signal_variance);
    cfg.ground_truth.length_scale = g.value("length_scale", cfg.ground_truth.length_scale);
    cfg.ground_truth.resolution = g.value("resolution", cfg.ground_truth.resolution);
  }
  cfg.ground_truth_csv = j.value("ground_truth_csv", cfg.ground_truth_csv);
  cfg.train_hyperparams = j.value("train_hyperparams", cfg.train_hyperparams);
  cfg.retrain_every = j.value("retrain_every", cfg.retrain_every);
  return cfg;
}

void write_metrics_csv(const BatchReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("write_metrics_csv: cannot open " + path);
  f << "run,step,alpv,rmse,mae,wall_ms\n";
  f.precision(17);
  for (size_t r = 0; r < report.runs.size(); ++r)
    for (const auto& s : report.runs[r].steps)
      f << r << ',' << s.step << ',' << s.alpv << ',' << s.rmse << ',' << s.mae << ','
        << s.wall_ms << '\n';
}

void write_field_csv(const gp::PosteriorStats& pred, const Eigen::MatrixX2d& grid,
                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("write_field_csv: cannot open " + path);
  f << "x,y,pred_mean,pred_var\n";
  f.precision(17);
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    f << grid(i, 0) << ',' << grid(i, 1) << ',' << pred.mean(i) << ','
      << pred.covariance(i, i) << '\n';
}

}  // namespace mrsn::harness
