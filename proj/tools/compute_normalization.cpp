// Computes raw extrema of the benchmark functions over the unit cube and
// prints the benchmark_constants.hpp header.
//
//   compute_normalization [--samples N] > include/metapo/benchmark_constants.hpp

#include "metapo/acquisition.hpp"
#include "metapo/benchmark_functions.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <queue>

using namespace metapo;

namespace {

struct Extrema {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  ParamVector argmin, argmax;
};

// Keeps the k best (largest key) points.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}
  void offer(double key, const ParamVector& x) {
    if (heap_.size() < k_) {
      heap_.push({key, x});
    } else if (key > heap_.top().first) {
      heap_.pop();
      heap_.push({key, x});
    }
  }
  std::vector<ParamVector> points() {
    std::vector<ParamVector> out;
    while (!heap_.empty()) {
      out.push_back(heap_.top().second);
      heap_.pop();
    }
    return out;
  }

 private:
  struct Cmp {
    bool operator()(const std::pair<double, ParamVector>& a, const std::pair<double, ParamVector>& b) const {
      return a.first > b.first;
    }
  };
  std::size_t k_;
  std::priority_queue<std::pair<double, ParamVector>, std::vector<std::pair<double, ParamVector>>, Cmp> heap_;
};

// Published global maximizers, mapped into the unit cube.
std::vector<ParamVector> known_optima(const bench::RawFunction& f) {
  const Eigen::Index d = f.dimension;
  if (f.name == "hartmann3") return {(ParamVector(3) << 0.114614, 0.555649, 0.852547).finished()};
  if (f.name == "hartmann6")
    return {(ParamVector(6) << 0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573).finished()};
  if (f.name == "isotropic_gaussian15") return {ParamVector::Constant(d, 0.5)};
  if (f.name == "rosenbrock20")
    return {ParamVector::Constant(d, (1.0 + bench::kRosenbrockHalfWidth) / (2.0 * bench::kRosenbrockHalfWidth))};
  return {};
}

Extrema compute(const bench::RawFunction& f, long samples, std::uint64_t seed) {
  Rng rng(seed);
  TopK hi(100), lo(100);
  Extrema e;
  const auto consider = [&](const ParamVector& x) {
    const double v = f.eval(x);
    hi.offer(v, x);
    lo.offer(-v, x);
    if (v > e.max) { e.max = v; e.argmax = x; }
    if (v < e.min) { e.min = v; e.argmin = x; }
  };
  for (long i = 0; i < samples; ++i) consider(rng.uniform_point(f.dimension));
  // Cube vertices: extrema of these functions often sit on the boundary.
  const long vertices = 1L << f.dimension;
  ParamVector v(f.dimension);
  for (long m = 0; m < vertices; ++m) {
    for (Eigen::Index j = 0; j < f.dimension; ++j) v[j] = (m >> j) & 1 ? 1.0 : 0.0;
    consider(v);
  }
  for (const auto& x : known_optima(f)) consider(x);
  MaximizerOptions opt;
  opt.starts = 0;
  opt.iters = 5000;
  opt.initial_step = 0.05;
  opt.min_step = 1e-13;
  const BatchObjective up = [&](const PointMatrix& X) {
    Eigen::VectorXd out(X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) out[i] = f.eval(X.col(i));
    return out;
  };
  const BatchObjective down = [&](const PointMatrix& X) { return Eigen::VectorXd(-up(X)); };
  const MaximizeResult rmax = maximize_acquisition(up, f.dimension, seed, opt, hi.points());
  const MaximizeResult rmin = maximize_acquisition(down, f.dimension, seed, opt, lo.points());
  if (rmax.value > e.max) { e.max = rmax.value; e.argmax = rmax.x; }
  if (-rmin.value < e.min) { e.min = -rmin.value; e.argmin = rmin.x; }
  return e;
}

std::string vec(const ParamVector& x) {
  std::string s;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += fmt::format("{}{:.17g}", i ? ", " : "", x[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compute benchmark normalization constants"};
  long samples = 10'000'000;
  std::uint64_t seed = 20240501;
  app.add_option("--samples", samples, "uniform samples per function");
  app.add_option("--seed", seed, "sampling seed");
  CLI11_PARSE(app, argc, argv);

  fmt::print("#pragma once\n\n");
  fmt::print("// Generated by tools/compute_normalization ({} uniform samples, all cube vertices,\n", samples);
  fmt::print("// published optima,\n// pattern-search refinement from the best 100). Raw extrema over [0,1]^d.\n\n");
  fmt::print("namespace metapo::bench {{\n\n");
  fmt::print("struct NormalizationConstants {{\n  const char* name;\n  double raw_min;\n  double raw_max;\n}};\n\n");
  fmt::print("inline constexpr NormalizationConstants kNormalization[] = {{\n");
  for (const auto& f : bench::raw_functions()) {
    const Extrema e = compute(f, samples, seed);
    fmt::print("    // argmax ({})\n", vec(e.argmax));
    fmt::print("    {{\"{}\", {:.17g}, {:.17g}}},\n", f.name, e.min, e.max);
    std::fflush(stdout);
  }
  fmt::print("}};\n\n}}  // namespace metapo::bench\n");
  return 0;
}
