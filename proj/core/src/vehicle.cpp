#include "mrsn/vehicle.hpp"

#include <cmath>

#include "mrsn/errors.hpp"

namespace mrsn::vehicle {

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

RobotState::RobotState(double x_, double y_, double heading_)
    : x(x_), y(y_), heading(normalize_angle(heading_)) {}

RobotState step(const RobotState& s, const ControlInput& u, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("step: dt must be positive");
  RobotState out;
  out.x = s.x + dt * std::cos(s.heading) * u.v;
  out.y = s.y + dt * std::sin(s.heading) * u.v;
  out.heading = normalize_angle(s.heading + dt * u.omega);
  return out;
}

std::vector<RobotState> rollout(const RobotState& s0, const std::vector<ControlInput>& controls,
                                double dt) {
  std::vector<RobotState> states;
  states.reserve(controls.size());
  RobotState cur = s0;
  for (const auto& u : controls) {
    cur = step(cur, u, dt);
    states.push_back(cur);
  }
  return states;
}

void linearize(const RobotState& s, const ControlInput& u, double dt, Eigen::Matrix3d& A,
               Eigen::Matrix<double, 3, 2>& B) {
  if (!(dt > 0.0)) throw InvalidArgument("linearize: dt must be positive");
  const double c = std::cos(s.heading);
  const double si = std::sin(s.heading);
  A.setIdentity();
  A(0, 2) = -dt * si * u.v;
  A(1, 2) = dt * c * u.v;
  B.setZero();
  B(0, 0) = dt * c;
  B(1, 0) = dt * si;
  B(2, 1) = dt;
}

double control_cost(const std::vector<ControlInput>& controls, const ControlInput& u_prev,
                    const CostWeights& w) {
  double cost = 0.0;
  Eigen::Vector2d prev(u_prev.v, u_prev.omega);
  for (const auto& u : controls) {
    Eigen::Vector2d cur(u.v, u.omega);
    Eigen::Vector2d d = cur - prev;
    cost += cur.dot(w.Q * cur) + d.dot(w.R * d);
    prev = cur;
  }
  return cost;
}

}  // namespace mrsn::vehicle
