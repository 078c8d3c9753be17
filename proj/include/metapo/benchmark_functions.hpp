#pragma once

// Raw benchmark objectives, written as maximization problems over [0,1]^d
// (inputs already mapped from the unit cube to each function's domain).

#include "metapo/core.hpp"

#include <array>
#include <string>
#include <vector>

namespace metapo::bench {

namespace hart {
inline constexpr std::array<double, 4> kAlpha{1.0, 1.2, 3.0, 3.2};
inline constexpr double kA3[4][3] = {{3.0, 10, 30}, {0.1, 10, 35}, {3.0, 10, 30}, {0.1, 10, 35}};
inline constexpr double kP3[4][3] = {{0.3689, 0.1170, 0.2673},
                                     {0.4699, 0.4387, 0.7470},
                                     {0.1091, 0.8732, 0.5547},
                                     {0.0381, 0.5743, 0.8828}};
inline constexpr double kA6[4][6] = {{10, 3, 17, 3.5, 1.7, 8},
                                     {0.05, 10, 17, 0.1, 8, 14},
                                     {3, 3.5, 1.7, 10, 17, 8},
                                     {17, 8, 0.05, 10, 0.1, 14}};
inline constexpr double kP6[4][6] = {{0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886},
                                     {0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991},
                                     {0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650},
                                     {0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381}};

template <int D, class A, class P>
double eval(const ParamVector& x, const A& a, const P& p) {
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0.0;
    for (int j = 0; j < D; ++j) {
      const double t = x[j] - p[i][j];
      inner += a[i][j] * t * t;
    }
    sum += kAlpha[static_cast<std::size_t>(i)] * std::exp(-inner);
  }
  return sum;
}
}  // namespace hart

/// Negated Hartmann-3 (maximum about 3.86278 at (0.114614, 0.555649, 0.852547)).
inline double hartmann3_raw(const ParamVector& x) { return hart::eval<3>(x, hart::kA3, hart::kP3); }

/// Negated Hartmann-6 (maximum about 3.32237).
inline double hartmann6_raw(const ParamVector& x) { return hart::eval<6>(x, hart::kA6, hart::kP6); }

inline double isotropic_gaussian_sigma(Eigen::Index d) { return 0.15 * std::sqrt(static_cast<double>(d)); }

/// exp(-|x - 0.5|^2 / (2 sigma^2)) with sigma = 0.15 sqrt(d): the 1-sigma ball spans 30% of the diagonal.
inline double isotropic_gaussian_raw(const ParamVector& x) {
  const double s = isotropic_gaussian_sigma(x.size());
  return std::exp(-(x.array() - 0.5).square().sum() / (2.0 * s * s));
}

inline constexpr double kRosenbrockHalfWidth = 2.048;

/// Negated Rosenbrock on [-2.048, 2.048]^d mapped from the unit cube.
inline double rosenbrock_raw(const ParamVector& x) {
  double f = 0.0;
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = (2.0 * x[i] - 1.0) * kRosenbrockHalfWidth;
    const double b = (2.0 * x[i + 1] - 1.0) * kRosenbrockHalfWidth;
    f += 100.0 * (b - a * a) * (b - a * a) + (1.0 - a) * (1.0 - a);
  }
  return -f;
}

struct RawFunction {
  std::string name;
  Eigen::Index dimension;
  double (*eval)(const ParamVector&);
};

inline const std::vector<RawFunction>& raw_functions() {
  static const std::vector<RawFunction> fns{{"hartmann3", 3, &hartmann3_raw},
                                            {"hartmann6", 6, &hartmann6_raw},
                                            {"isotropic_gaussian15", 15, &isotropic_gaussian_raw},
                                            {"rosenbrock20", 20, &rosenbrock_raw}};
  return fns;
}

}  // namespace metapo::bench
