#pragma once

// 2D search planes through the parameter cube and their 5x5 candidate grids.

#include "metapo/acquisition.hpp"

#include <array>

namespace metapo {

class DegeneratePlane : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

inline constexpr std::array<double, 5> kPlaneOffsets{-1.0, -0.5, 0.0, 0.5, 1.0};
inline constexpr int kGridSide = 5;
inline constexpr int kGridSize = 25;
inline constexpr int kCenterIndex = 12;

/// Row-major index of grid cell (s, t) given offset positions 0..4.
constexpr int grid_index(int s_pos, int t_pos) { return s_pos * kGridSide + t_pos; }

struct SearchPlane {
  ParamVector center;
  ParamVector corner1;
  ParamVector corner2;
  ParamVector reflection1;  // clip(2 center - corner1)
  ParamVector reflection2;
  std::vector<ParamVector> grid;  // 25 points, index = 5 * s_pos + t_pos

  Eigen::Index dimension() const noexcept { return center.size(); }

  /// Grid cells lying on the center, the corners and the reflections.
  static constexpr std::array<int, 5> kVertexCells{kCenterIndex, grid_index(4, 2), grid_index(2, 4), grid_index(0, 2),
                                                   grid_index(2, 0)};

  PointMatrix grid_matrix() const {
    PointMatrix G(dimension(), kGridSize);
    for (int i = 0; i < kGridSize; ++i) G.col(i) = grid[static_cast<std::size_t>(i)];
    return G;
  }
};

/// sin^2 of the angle between the plane directions is below `tol`, or a direction vanishes.
inline bool plane_is_degenerate(const ParamVector& center, const ParamVector& c1, const ParamVector& c2,
                                double tol = 1e-4) {
  const ParamVector u = c1 - center, v = c2 - center;
  const double uu = u.squaredNorm(), vv = v.squaredNorm();
  if (uu < 1e-18 || vv < 1e-18) return true;
  const double uv = u.dot(v);
  return 1.0 - uv * uv / (uu * vv) < tol;
}

inline SearchPlane build_plane(const ParamVector& center, const ParamVector& c1, const ParamVector& c2) {
  const Eigen::Index d = center.size();
  if (c1.size() != d || c2.size() != d) throw InvalidInput("build_plane: dimension mismatch");
  if (!center.allFinite() || !c1.allFinite() || !c2.allFinite()) throw InvalidInput("build_plane: non-finite point");
  if (exactly_equal(c1, center) && exactly_equal(c2, center)) throw DegeneratePlane("c1 = c2 = center");
  SearchPlane p;
  p.center = center;
  p.corner1 = c1;
  p.corner2 = c2;
  p.reflection1 = clip_to_cube(2.0 * center - c1);
  p.reflection2 = clip_to_cube(2.0 * center - c2);
  const ParamVector u = c1 - center, v = c2 - center;
  p.grid.reserve(kGridSize);
  for (double s : kPlaneOffsets)
    for (double t : kPlaneOffsets) p.grid.push_back(clip_to_cube(center + s * u + t * v));
  p.grid[kCenterIndex] = center;
  return p;
}

/// Projects x onto the hyperplane through `center` orthogonal to `u`, then
/// pulls it toward the center along the same ray until it is inside the cube
/// (which keeps the orthogonality exact).
inline ParamVector project_orthogonal(const ParamVector& center, const ParamVector& unit_u, const ParamVector& x) {
  ParamVector y = x - center;
  y -= y.dot(unit_u) * unit_u;
  double t = 1.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (y[j] > 0.0) t = std::min(t, (1.0 - center[j]) / y[j]);
    else if (y[j] < 0.0) t = std::min(t, -center[j] / y[j]);
  }
  return clip_to_cube(center + std::max(0.0, t) * y);  // roundoff only
}

/// Maximizes `objective` over the hyperplane through `center` orthogonal to c1 - center.
inline ParamVector orthogonal_third_point(const ParamVector& center, const ParamVector& c1,
                                          const BatchObjective& objective, std::uint64_t seed,
                                          const MaximizerOptions& opt = {}) {
  const ParamVector u = c1 - center;
  const double norm = u.norm();
  if (!(norm > 0.0)) throw InvalidInput("orthogonal_third_point: zero direction");
  const ParamVector unit = u / norm;
  const BatchObjective projected = [&](const PointMatrix& X) {
    PointMatrix P(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) P.col(i) = project_orthogonal(center, unit, X.col(i));
    return objective(P);
  };
  const MaximizeResult r = maximize_acquisition(projected, center.size(), seed, opt);
  return project_orthogonal(center, unit, r.x);
}

inline SearchPlane random_plane(Eigen::Index dimension, std::uint64_t seed) {
  if (dimension < 2) throw InvalidInput("random_plane: dimension must be >= 2");
  Rng rng(derive_seed(seed, 0x706c616eu));
  for (;;) {
    ParamVector c = rng.uniform_point(dimension);
    ParamVector a = rng.uniform_point(dimension);
    ParamVector b = rng.uniform_point(dimension);
    if (!plane_is_degenerate(c, a, b)) return build_plane(c, a, b);
  }
}

}  // namespace metapo
