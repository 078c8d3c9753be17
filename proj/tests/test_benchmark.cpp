#include "metapo/benchmark.hpp"

#include <gtest/gtest.h>

using namespace metapo;

namespace {

ParamVector vec(std::initializer_list<double> v) {
  ParamVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

SessionConfig cheap() {
  SessionConfig c;
  c.maximizer = {12, 25};
  c.fit.restarts = 1;
  c.refit_restarts = 1;
  c.rejected = RejectedSet::vertices;
  return c;
}

}  // namespace

TEST(Functions, HartmannOptima) {
  const auto h3 = BenchmarkFunction::by_name("hartmann3");
  EXPECT_NEAR(h3.raw(vec({0.114614, 0.555649, 0.852547})), 3.86278, 1e-5);
  EXPECT_NEAR(h3.raw_max(), 3.86278, 1e-5);
  const auto h6 = BenchmarkFunction::by_name("hartmann6");
  EXPECT_NEAR(h6.raw(vec({0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573})), 3.32237, 1e-5);
  EXPECT_NEAR(h6.raw_max(), 3.32237, 1e-5);
}

TEST(Functions, RosenbrockAndGaussian) {
  const auto r = BenchmarkFunction::by_name("rosenbrock20");
  EXPECT_EQ(r.dimension(), 20);
  // x maps to a = 1 in every coordinate
  EXPECT_NEAR(r.raw(ParamVector::Constant(20, (1.0 / 2.048 + 1.0) / 2.0)), 0.0, 1e-12);
  const auto g = BenchmarkFunction::by_name("isotropic_gaussian15");
  EXPECT_DOUBLE_EQ(g.raw(ParamVector::Constant(15, 0.5)), 1.0);
  const double s2 = 0.15 * 0.15 * 15;
  EXPECT_NEAR(g.raw_min(), std::exp(-15 * 0.25 / (2 * s2)), 1e-12);
  EXPECT_NEAR(g.raw(ParamVector::Zero(15)), g.raw_min(), 1e-15);
  const auto g7 = BenchmarkFunction::by_name("isotropic_gaussian7");
  EXPECT_EQ(g7.dimension(), 7);
  EXPECT_DOUBLE_EQ(g7.raw_min(), g.raw_min());
  EXPECT_THROW(BenchmarkFunction::by_name("branin"), ConfigError);
  EXPECT_THROW(BenchmarkFunction::by_name("isotropic_gaussian1"), ConfigError);
  EXPECT_THROW(g.raw(ParamVector::Zero(3)), InvalidInput);
}

TEST(Functions, NormalizedRange) {
  for (const auto& name : BenchmarkFunction::names()) {
    const auto f = BenchmarkFunction::by_name(name);
    Rng r(1);
    for (int i = 0; i < 2000; ++i) {
      const double v = f.normalized(r.uniform_point(f.dimension()));
      EXPECT_GE(v, -1.0 - 1e-9) << name;
      EXPECT_LE(v, 1.0 + 1e-9) << name;
    }
  }
  const auto h3 = BenchmarkFunction::by_name("hartmann3");
  EXPECT_NEAR(h3.normalized(vec({0.114614, 0.555649, 0.852547})), 1.0, 1e-5);
}

TEST(SyntheticUsers, SampledWithinRanges) {
  const auto f = BenchmarkFunction::by_name("hartmann6");
  for (std::uint64_t s = 0; s < 50; ++s) {
    const SyntheticUser u = SyntheticUser::sample(f, s);
    EXPECT_LE(u.shift.cwiseAbs().maxCoeff(), 0.05);
    EXPECT_GE(u.scale, 0.9);
    EXPECT_LE(u.scale, 1.1);
    EXPECT_EQ(u.optimum(), u.scale);
    const SyntheticUser again = SyntheticUser::sample(f, s);
    EXPECT_TRUE(exactly_equal(u.shift, again.shift));
  }
  const SyntheticUser id = SyntheticUser::identity(f);
  const ParamVector x = vec({0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_EQ(id(x), f.normalized(x));
  EXPECT_GE(id.regret(x), 0.0);
}

TEST(Oracle, PicksBestCell) {
  const auto f = BenchmarkFunction::by_name("isotropic_gaussian15");
  const SyntheticUser u = SyntheticUser::identity(f);
  const SearchPlane p = random_plane(15, 4);
  const int idx = oracle_select(u, p);
  for (int i = 0; i < kGridSize; ++i) EXPECT_LE(u(p.grid[i]), u(p.grid[idx]));
  // plane centred on the peak
  const ParamVector c = ParamVector::Constant(15, 0.5);
  ParamVector a = c, b = c;
  a[0] = 0.8;
  b[1] = 0.2;
  const SearchPlane flat = build_plane(c, a, b);
  EXPECT_EQ(oracle_select(u, flat), kCenterIndex);
}

TEST(Regret, MonotoneOverSeededRuns) {
  const auto f = BenchmarkFunction::by_name("hartmann3");
  for (int run = 0; run < 100; ++run) {
    SessionConfig c = cheap();
    c.dimension = 3;
    c.method = run % 4 == 0 ? Method::no_transfer_o : Method::random;
    c.max_iterations = 8;
    c.seed = static_cast<std::uint64_t>(run);
    const UserRun r = simulate_user(SyntheticUser::sample(f, 1000 + run), c);
    ASSERT_EQ(r.trace.regret.size(), 8u);
    for (std::size_t k = 1; k < r.trace.regret.size(); ++k) EXPECT_LE(r.trace.regret[k], r.trace.regret[k - 1]) << run;
    for (double v : r.trace.regret) EXPECT_GE(v, 0.0);
  }
}

TEST(Experiment, CsvIsByteIdenticalPerSeed) {
  ExperimentSpec spec;
  spec.function = "hartmann3";
  spec.methods = {Method::random, Method::no_transfer_o, Method::meta_po_r_o};
  spec.iterations = 4;
  spec.population_users = 2;
  spec.test_users = 2;
  spec.seeds = {7};
  spec.session = cheap();
  const ExperimentResult a = run_experiment(spec), b = run_experiment(spec);
  EXPECT_EQ(summary_csv(a, spec.methods), summary_csv(b, spec.methods));
  EXPECT_EQ(final_summary_csv(a, spec.methods), final_summary_csv(b, spec.methods));
  ASSERT_EQ(a.traces.size(), 6u);
  for (std::size_t i = 0; i < a.traces.size(); ++i) {
    EXPECT_EQ(trace_csv(a.traces[i]), trace_csv(b.traces[i]));
    EXPECT_EQ(trace_file_name(spec.function, a.traces[i]), trace_file_name(spec.function, b.traces[i]));
  }
  spec.seeds = {8};
  const ExperimentResult c = run_experiment(spec);
  EXPECT_NE(summary_csv(a, spec.methods), summary_csv(c, spec.methods));
  const std::string s = summary_csv(a, spec.methods);
  EXPECT_EQ(s.substr(0, s.find('\n')), "method,iter,mean_regret,sd_regret,runs");
}

TEST(Experiment, MeanCurveAveragesTraces) {
  ExperimentResult r;
  r.iterations = 2;
  r.traces.push_back({Method::random, 0, 0, {0.4, 0.2}});
  r.traces.push_back({Method::random, 1, 0, {0.2, 0.1}});
  const auto m = r.mean_curve(Method::random);
  EXPECT_NEAR(m[0], 0.3, 1e-15);
  EXPECT_NEAR(m[1], 0.15, 1e-15);
  EXPECT_NEAR(r.sd_curve(Method::random)[0], std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(r.final_mean(Method::random), 0.15, 1e-15);
}

TEST(Experiment, FirstBelow) {
  EXPECT_EQ(first_below({0.5, 0.2, 0.09, 0.01}, 0.1), 3);
  EXPECT_EQ(first_below({0.5, 0.2}, 0.1), 0);
}

TEST(Experiment, PopulationHasOneModelPerUser) {
  ExperimentSpec spec;
  spec.iterations = 3;
  spec.population_users = 3;
  spec.session = cheap();
  spec.session.dimension = 3;
  const auto f = BenchmarkFunction::by_name("hartmann3");
  const auto g = build_population(f, Method::no_transfer_o, spec, 0);
  EXPECT_EQ(g->size(), 3u);
  EXPECT_EQ(g->dimension(), 3);
}
