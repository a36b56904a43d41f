#include "mrsn/geometry.hpp"

#include "mrsn/errors.hpp"

namespace mrsn::geometry {

namespace {
constexpr double kMinSeparation = 1e-9;
}

Polytope voronoi_cell(int i, const Eigen::MatrixX2d& positions, const Rect& domain) {
  const int m = static_cast<int>(positions.rows());
  if (i < 0 || i >= m) throw InvalidArgument("voronoi_cell: agent index out of range");
  const Eigen::Vector2d si = positions.row(i);
  if (!domain.contains(si)) throw InvalidArgument("voronoi_cell: generator outside domain");

  Polytope cell;
  cell.halfplanes.reserve(static_cast<size_t>(m) + 3);
  cell.halfplanes.push_back({{1.0, 0.0}, domain.x_max});
  cell.halfplanes.push_back({{-1.0, 0.0}, -domain.x_min});
  cell.halfplanes.push_back({{0.0, 1.0}, domain.y_max});
  cell.halfplanes.push_back({{0.0, -1.0}, -domain.y_min});

  for (int j = 0; j < m; ++j) {
    if (j == i) continue;
    const Eigen::Vector2d sj = positions.row(j);
    const Eigen::Vector2d d = sj - si;
    const double dist = d.norm();
    if (dist <= kMinSeparation)
      throw DegenerateConfigurationError("voronoi_cell: coincident generator positions");
    const Eigen::Vector2d n = d / dist;
    const Eigen::Vector2d mid = 0.5 * (si + sj);
    cell.halfplanes.push_back({n, n.dot(mid)});
  }
  return cell;
}

Polytope shrink(const Polytope& p, double eps) {
  if (eps < 0.0) throw InvalidArgument("shrink: eps must be nonnegative");
  Polytope out = p;
  for (auto& hp : out.halfplanes) hp.offset -= eps;
  return out;
}

bool contains(const Polytope& p, const Eigen::Vector2d& q, double tol) {
  for (const auto& hp : p.halfplanes) {
    if (hp.normal.dot(q) > hp.offset + tol) return false;
  }
  return true;
}

}  // namespace mrsn::geometry
