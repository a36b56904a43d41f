#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mrsn::vehicle {

/// Unicycle pose. Heading is kept in (-pi, pi] by every constructor and step.
struct RobotState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  RobotState() = default;
  RobotState(double x_, double y_, double heading_);

  Eigen::Vector2d position() const { return {x, y}; }
};

/// Linear and angular velocity command.
struct ControlInput {
  double v = 0.0;
  double omega = 0.0;
};

/// Box bounds on ControlInput.
struct ControlBounds {
  double v_min = -2.0;
  double v_max = 2.0;
  double omega_min = -M_PI;
  double omega_max = M_PI;
};

/// Velocity (Q) and acceleration (R) penalty weights; both symmetric PSD 2x2.
struct CostWeights {
  Eigen::Matrix2d Q = 0.01 * Eigen::Matrix2d::Identity();
  Eigen::Matrix2d R = Eigen::Matrix2d::Identity();
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

/// One step of the discrete unicycle model:
///   x' = x + dt cos(theta) v,  y' = y + dt sin(theta) v,  theta' = theta + dt w.
RobotState step(const RobotState& s, const ControlInput& u, double dt);

/// Iterated step; returns the H states after applying each control in turn.
std::vector<RobotState> rollout(const RobotState& s0, const std::vector<ControlInput>& controls,
                                double dt);

/// Jacobians of the discrete step w.r.t. state (A, 3x3) and control (B, 3x2).
void linearize(const RobotState& s, const ControlInput& u, double dt, Eigen::Matrix3d& A,
               Eigen::Matrix<double, 3, 2>& B);

/// Quadratic control cost: sum_j ||u_j||_Q^2 + ||u_j - u_{j-1}||_R^2 with u_{-1} = u_prev.
double control_cost(const std::vector<ControlInput>& controls, const ControlInput& u_prev,
                    const CostWeights& w);

}  // namespace mrsn::vehicle
