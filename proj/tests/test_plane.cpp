#include "metapo/plane.hpp"

#include <gtest/gtest.h>

using namespace metapo;

namespace {

ParamVector vec(std::initializer_list<double> v) {
  ParamVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

}  // namespace

TEST(Plane, GridGeometry) {
  const ParamVector c = vec({0.5, 0.5, 0.5}), a = vec({0.7, 0.6, 0.5}), b = vec({0.4, 0.8, 0.3});
  const SearchPlane p = build_plane(c, a, b);
  ASSERT_EQ(p.grid.size(), 25u);
  EXPECT_TRUE(exactly_equal(p.grid[kCenterIndex], c));
  EXPECT_TRUE(p.grid[grid_index(4, 2)].isApprox(a, 1e-15));
  EXPECT_TRUE(p.grid[grid_index(2, 4)].isApprox(b, 1e-15));
  EXPECT_TRUE(p.grid[grid_index(0, 2)].isApprox(p.reflection1, 1e-15));
  EXPECT_TRUE(p.grid[grid_index(2, 0)].isApprox(p.reflection2, 1e-15));
  EXPECT_TRUE(p.reflection1.isApprox(vec({0.3, 0.4, 0.5}), 1e-15));
  // midpoint cell
  EXPECT_TRUE(p.grid[grid_index(3, 3)].isApprox(c + 0.5 * (a - c) + 0.5 * (b - c), 1e-15));
  for (int cell : SearchPlane::kVertexCells) EXPECT_LT(cell, kGridSize);
}

TEST(Plane, ReflectionsAreClipped) {
  const ParamVector c = vec({0.9, 0.1}), a = vec({0.2, 0.5}), b = vec({0.95, 0.9});
  const SearchPlane p = build_plane(c, a, b);
  EXPECT_TRUE(exactly_equal(p.reflection1, vec({1.0, 0.0})));
  for (const auto& g : p.grid) EXPECT_TRUE(in_unit_cube(g));
  EXPECT_TRUE(exactly_equal(p.reflection2, clip_to_cube(2.0 * c - b)));
}

TEST(Plane, DegeneracyDetection) {
  const ParamVector c = vec({0.5, 0.5});
  EXPECT_TRUE(plane_is_degenerate(c, vec({0.7, 0.7}), vec({0.6, 0.6})));
  EXPECT_TRUE(plane_is_degenerate(c, c, vec({0.6, 0.1})));
  EXPECT_FALSE(plane_is_degenerate(c, vec({0.7, 0.7}), vec({0.6, 0.1})));
  EXPECT_THROW(build_plane(c, c, c), DegeneratePlane);
  EXPECT_THROW(build_plane(c, vec({0.1, 0.2, 0.3}), c), InvalidInput);
}

TEST(Plane, OrthogonalProjectionStaysInCube) {
  Rng r(1);
  for (int t = 0; t < 200; ++t) {
    const ParamVector c = r.uniform_point(6), x = r.uniform_point(6);
    const ParamVector u = (r.uniform_point(6) - c).normalized();
    const ParamVector y = project_orthogonal(c, u, x);
    EXPECT_TRUE(in_unit_cube(y));
    EXPECT_LE(std::abs((y - c).dot(u)), 1e-12);
  }
}

TEST(Plane, OrthogonalThirdPointResidual) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(seed % 10);
    const ParamVector c = r.uniform_point(d), c1 = r.uniform_point(d), target = r.uniform_point(d);
    const BatchObjective f = [&](const PointMatrix& X) {
      return Eigen::VectorXd(-(X.colwise() - target).colwise().squaredNorm().transpose());
    };
    const ParamVector c2 = orthogonal_third_point(c, c1, f, seed, MaximizerOptions{20, 40});
    const ParamVector u = c1 - c, v = c2 - c;
    EXPECT_LE(std::abs(u.dot(v)) / (u.norm() * std::max(v.norm(), 1e-300)), 1e-6) << "seed " << seed;
    EXPECT_TRUE(in_unit_cube(c2));
  }
  const ParamVector c = vec({0.5, 0.5});
  EXPECT_THROW(orthogonal_third_point(c, c, [](const PointMatrix& X) { return Eigen::VectorXd(X.row(0).transpose()); }, 0),
               InvalidInput);
}

TEST(Plane, RandomPlaneIsSeeded) {
  const SearchPlane a = random_plane(4, 3), b = random_plane(4, 3), c = random_plane(4, 4);
  EXPECT_TRUE(exactly_equal(a.corner1, b.corner1));
  EXPECT_TRUE(exactly_equal(a.corner2, b.corner2));
  EXPECT_FALSE(exactly_equal(a.center, c.center));
  EXPECT_FALSE(plane_is_degenerate(a.center, a.corner1, a.corner2));
  EXPECT_THROW(random_plane(1, 0), InvalidInput);
}
