#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mrsn::geometry {

/// Axis-aligned rectangle [x_min, x_max] x [y_min, y_max].
struct Rect {
  double x_min = 0.0;
  double x_max = 40.0;
  double y_min = 0.0;
  double y_max = 30.0;

  bool contains(const Eigen::Vector2d& q, double tol = 0.0) const {
    return q.x() >= x_min - tol && q.x() <= x_max + tol && q.y() >= y_min - tol &&
           q.y() <= y_max + tol;
  }
  Eigen::Vector2d clamp(const Eigen::Vector2d& q) const {
    return {std::clamp(q.x(), x_min, x_max), std::clamp(q.y(), y_min, y_max)};
  }
  Eigen::Vector2d center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
};

/// Constraint normal . q <= offset with unit normal.
struct HalfPlane {
  Eigen::Vector2d normal;
  double offset;
};

/// Intersection of half-planes; includes the four domain-rectangle facets.
struct Polytope {
  std::vector<HalfPlane> halfplanes;
};

/// Voronoi cell of agent i among the given positions, clipped to the domain.
/// Each bisector half-plane has unit normal pointing from s_i toward s_j.
Polytope voronoi_cell(int i, const Eigen::MatrixX2d& positions, const Rect& domain);

/// Inward erosion by eps: every facet offset reduced by eps.
Polytope shrink(const Polytope& p, double eps);

/// Membership test: normal . q <= offset + tol for every facet.
bool contains(const Polytope& p, const Eigen::Vector2d& q, double tol);

}  // namespace mrsn::geometry
