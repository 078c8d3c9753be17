#include "metapo/acquisition.hpp"

#include <gtest/gtest.h>

using namespace metapo;

namespace {

ParamVector p1(double a) {
  ParamVector x(1);
  x << a;
  return x;
}

ParamVector p2(double a, double b) {
  ParamVector x(2);
  x << a, b;
  return x;
}

/// Interpolating model: the posterior mean at each point equals its latent.
std::shared_ptr<PreferenceGP> pinned(const std::vector<ParamVector>& pts, const std::vector<double>& g,
                                     double length = 0.2, double prior_mean = 0.0) {
  PointMatrix X(pts.front().size(), static_cast<Eigen::Index>(pts.size()));
  Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    X.col(static_cast<Eigen::Index>(i)) = pts[i];
    v[static_cast<Eigen::Index>(i)] = g[i];
  }
  return std::make_shared<PreferenceGP>(KernelHyperparams::isotropic(X.rows(), length, 1.0, 1e-8), X, v, "",
                                        prior_mean);
}

PreferenceDataset random_dataset(Eigen::Index d, int events, std::uint64_t seed) {
  Rng r(seed);
  PreferenceDataset data(d);
  for (int e = 0; e < events; ++e) data.append({r.uniform_point(d), {r.uniform_point(d), r.uniform_point(d)}, e + 1});
  return data;
}

PointMatrix random_points(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  Rng r(seed);
  PointMatrix X(d, n);
  for (Eigen::Index i = 0; i < n; ++i) X.col(i) = r.uniform_point(d);
  return X;
}

std::shared_ptr<PopulationGallery> two_bump_gallery() {
  auto g = std::make_shared<PopulationGallery>();
  g->add(pinned({p2(0.2, 0.2), p2(0.8, 0.8), p2(0.5, 0.5)}, {1.0, -0.5, 0.0}), "a");
  g->add(pinned({p2(0.2, 0.8), p2(0.8, 0.2), p2(0.5, 0.5)}, {0.8, 0.3, 0.0}), "b");
  return g;
}

}  // namespace

TEST(ExpectedImprovement, ClosedForm) {
  EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0), 0.3989422804014327, 1e-15);
  EXPECT_NEAR(normal_cdf(0.0), 0.5, 1e-16);
  // z = 1: 1 * Phi(1) + phi(1)
  EXPECT_NEAR(expected_improvement(2.0, 1.0, 1.0), 0.8413447460685429 + 0.24197072451914337, 1e-12);
  EXPECT_EQ(expected_improvement(0.4, 0.0, 0.1), 0.30000000000000004);
  EXPECT_EQ(expected_improvement(-0.4, 0.0, 0.1), 0.0);
}

TEST(ExpectedImprovement, MonotoneInMeanAndSd) {
  double prev = -1.0;
  for (int i = 0; i <= 40; ++i) {
    const double ei = expected_improvement(-2.0 + 0.1 * i, 0.5, 0.0);
    EXPECT_GT(ei, prev);
    prev = ei;
  }
  prev = -1.0;
  for (int i = 1; i <= 40; ++i) {
    const double ei = expected_improvement(0.2, 0.05 * i, 0.0);
    EXPECT_GE(ei, prev);
    prev = ei;
  }
}

TEST(Decay, Schedule) {
  const DecaySchedule s;
  EXPECT_EQ(decay(s, 1), 1.0);
  EXPECT_EQ(decay(s, 5), 1.0);
  EXPECT_NEAR(decay(s, 10), 0.5, 1e-15);
  EXPECT_EQ(decay(s, 15), 0.0);
  EXPECT_EQ(decay(s, 40), 0.0);
  EXPECT_EQ(s.zero_from(), 15);
  for (int k = 1; k < 30; ++k) EXPECT_LE(decay(s, k + 1), decay(s, k));
  const DecaySchedule fast{3, 8.0};
  EXPECT_EQ(decay(fast, 3), 1.0);
  EXPECT_EQ(decay(fast, 4), 0.0);
  EXPECT_THROW(decay(s, 0), InvalidInput);
  EXPECT_THROW((DecaySchedule{-1, 0.1}.validate()), InvalidInput);
  EXPECT_THROW((DecaySchedule{5, 0.0}.validate()), InvalidInput);
}

TEST(TransferWeights, TafMFromPosteriorVariance) {
  // prior-only models: posterior variance equals the signal variance
  PopulationGallery g;
  g.add(std::make_shared<PreferenceGP>(PreferenceGP::prior_only(KernelHyperparams::isotropic(2, 0.2, 0.1))));
  g.add(std::make_shared<PreferenceGP>(PreferenceGP::prior_only(KernelHyperparams::isotropic(2, 0.2, 1.0))));
  const Eigen::VectorXd w = taf_m_weights(g, {p2(0.1, 0.1), p2(0.6, 0.3)});
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_NEAR(w[0] / w[1], (1.0 / 1.1) / 0.5, 1e-12);
  EXPECT_NEAR(w[0] / w[1], 1.818, 1e-3);
}

TEST(TransferWeights, TafRCountsConcordantPairs) {
  const std::vector<ParamVector> pts{p1(0.1), p1(0.3), p1(0.5), p1(0.7), p1(0.9)};
  PreferenceDataset data(1);
  data.append({pts[0], {pts[1], pts[2]}, 1});
  data.append({pts[3], {pts[4], pts[1]}, 2});
  const auto current = pinned(pts, {1.0, 0.0, -1.0, 1.0, 0.0}, 0.05);
  PopulationGallery g;
  g.add(pinned(pts, {1.0, 0.0, 2.0, 1.0, 0.0}, 0.05));     // disagrees on one of four pairs
  g.add(pinned(pts, {1.0, 0.0, -1.0, 1.0, 0.0}, 0.05));    // identical
  g.add(pinned(pts, {-1.0, 0.0, 1.0, -1.0, 0.0}, 0.05));   // negated
  g.add(std::make_shared<PreferenceGP>(PreferenceGP::prior_only(KernelHyperparams::isotropic(1, 0.05))));  // all ties
  const Eigen::VectorXd w = taf_r_weights(g, *current, data);
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 1.0, 1e-12);
  EXPECT_NEAR(w[2], 0.0, 1e-12);
  EXPECT_NEAR(w[3], 0.5, 1e-12);
  EXPECT_TRUE((taf_r_weights(g, *current, PreferenceDataset(1)).array() == 1.0).all());
}

TEST(Taf, FullDecayIsGalleryImprovement) {
  const auto gallery = two_bump_gallery();
  AcquisitionContext ctx;
  ctx.current_model = pinned({p2(0.4, 0.4), p2(0.6, 0.1)}, {0.2, -0.2});
  ctx.gallery = gallery;
  ctx.weights = Eigen::Vector2d(0.6, 0.3);
  ctx.iteration = 3;
  ctx.best_observed = p2(0.5, 0.5);
  const TafAcquisition acq(ctx);
  EXPECT_EQ(acq.decay_factor(), 1.0);
  Rng r(4);
  for (int i = 0; i < 50; ++i) {
    const ParamVector x = r.uniform_point(2);
    double want = 0.0;
    for (int m = 0; m < 2; ++m) {
      const auto& gp = *gallery->models[static_cast<std::size_t>(m)];
      want += ctx.weights[m] * std::max(0.0, gp.predict(x).mean - gp.predict(ctx.best_observed).mean);
    }
    EXPECT_NEAR(acq(x), want, 1e-12);
  }
}

TEST(Taf, PartialDecayMixes) {
  const auto gallery = two_bump_gallery();
  AcquisitionContext ctx;
  ctx.current_model = pinned({p2(0.4, 0.4), p2(0.6, 0.1)}, {0.2, -0.2});
  ctx.gallery = gallery;
  ctx.iteration = 10;
  ctx.best_observed = p2(0.4, 0.4);
  const TafAcquisition acq(ctx);
  AcquisitionContext ei_ctx = ctx;
  ei_ctx.ei_only = true;
  AcquisitionContext full = ctx;
  full.iteration = 1;
  const TafAcquisition ei(ei_ctx), gal(full);
  Rng r(5);
  for (int i = 0; i < 30; ++i) {
    const ParamVector x = r.uniform_point(2);
    EXPECT_NEAR(acq(x), 0.5 * ei(x) + 0.5 * gal(x), 1e-12);
    EXPECT_NEAR(ei(x), expected_improvement(*ctx.current_model, x, ctx.current_model->predict(ctx.best_observed).mean),
                1e-14);
  }
}

TEST(Taf, FirstIterationUsesGalleryWithUnitWeights) {
  AcquisitionContext ctx;
  ctx.gallery = two_bump_gallery();
  ctx.best_observed = p2(0.5, 0.5);
  const TafAcquisition acq(ctx);
  EXPECT_EQ(acq.decay_factor(), 1.0);
  const double v = acq(p2(0.2, 0.2));
  EXPECT_NEAR(v, 1.0 + std::max(0.0, ctx.gallery->models[1]->predict(p2(0.2, 0.2)).mean), 1e-6);
  ctx.iteration = 2;
  EXPECT_THROW(TafAcquisition{ctx}, InvalidState);
  AcquisitionContext none;
  none.best_observed = p2(0.5, 0.5);
  EXPECT_THROW(TafAcquisition{none}, InvalidState);
}

TEST(Taf, InvariantToShiftingPopulationModels) {
  const std::vector<ParamVector> pts{p2(0.2, 0.2), p2(0.8, 0.8), p2(0.5, 0.5)};
  const std::vector<double> g{1.0, -0.5, 0.0};
  auto base = std::make_shared<PopulationGallery>();
  base->add(pinned(pts, g));
  auto shifted = std::make_shared<PopulationGallery>();
  shifted->add(pinned(pts, {g[0] + 3.0, g[1] + 3.0, g[2] + 3.0}, 0.2, 3.0));
  AcquisitionContext a;
  a.current_model = pinned({p2(0.3, 0.6)}, {0.1});
  a.iteration = 7;
  a.best_observed = p2(0.3, 0.6);
  a.gallery = base;
  AcquisitionContext b = a;
  b.gallery = shifted;
  const TafAcquisition ta(a), tb(b);
  Rng r(6);
  for (int i = 0; i < 40; ++i) {
    const ParamVector x = r.uniform_point(2);
    EXPECT_NEAR(ta(x), tb(x), 1e-10);
  }
}

TEST(Taf, HandoffMatchesPureEiOnProbeGrid) {
  // when the decay reaches zero the acquisition is plain EI: same argmax on a 100 x 100 grid
  const PreferenceDataset data = random_dataset(2, 10, 8);
  auto current = std::make_shared<PreferenceGP>(fit_preference_gp(data, 1));
  AcquisitionContext ctx;
  ctx.current_model = current;
  ctx.gallery = two_bump_gallery();
  ctx.best_observed = data.events().back().chosen;
  ctx.iteration = DecaySchedule{}.zero_from();
  AcquisitionContext ei = ctx;
  ei.gallery = nullptr;
  PointMatrix grid(2, 10000);
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 100; ++j) grid.col(100 * i + j) = p2((i + 0.5) / 100.0, (j + 0.5) / 100.0);
  const Eigen::VectorXd va = TafAcquisition(ctx)(grid), vb = TafAcquisition(ei)(grid);
  Eigen::Index ia, ib;
  va.maxCoeff(&ia);
  vb.maxCoeff(&ib);
  EXPECT_EQ(ia, ib);
  EXPECT_EQ((va - vb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Maximizer, FindsQuadraticPeak) {
  const BatchObjective f = [](const PointMatrix& X) {
    Eigen::VectorXd v(X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i)
      v[i] = -std::pow(X(0, i) - 0.3, 2) - std::pow(X(1, i) - 0.7, 2) - std::pow(X(2, i) - 0.55, 2);
    return v;
  };
  const MaximizeResult r = maximize_acquisition(f, 3, 17);
  EXPECT_NEAR(r.x[0], 0.3, 0.02);
  EXPECT_NEAR(r.x[1], 0.7, 0.02);
  EXPECT_NEAR(r.x[2], 0.55, 0.02);
  const MaximizeResult again = maximize_acquisition(f, 3, 17);
  EXPECT_TRUE(exactly_equal(r.x, again.x));
  EXPECT_EQ(r.value, again.value);
}

TEST(Maximizer, StaysInCubeForBoundaryOptimum) {
  const BatchObjective f = [](const PointMatrix& X) { return Eigen::VectorXd(X.colwise().sum().transpose()); };
  const MaximizeResult r = maximize_acquisition(f, 4, 2);
  EXPECT_TRUE(in_unit_cube(r.x));
  EXPECT_NEAR(r.value, 4.0, 1e-6);
}

TEST(Maximizer, FlatObjectiveKeepsFirstStart) {
  const BatchObjective f = [](const PointMatrix& X) { return Eigen::VectorXd(Eigen::VectorXd::Zero(X.cols())); };
  const MaximizeResult r = maximize_acquisition(f, 3, 9);
  Rng rng(derive_seed(9, 0x6d6178u));
  EXPECT_TRUE(exactly_equal(r.x, rng.uniform_point(3)));
  const MaximizeResult ex = maximize_acquisition(f, 2, 9, MaximizerOptions{0, 10}, {p2(0.25, 0.75)});
  EXPECT_TRUE(exactly_equal(ex.x, p2(0.25, 0.75)));
  EXPECT_THROW(maximize_acquisition(f, 2, 9, MaximizerOptions{0, 10}), InvalidInput);
}

TEST(TwoStep, NoPreviousPlaneLeavesAcquisitionUnchanged) {
  const PreferenceDataset data = random_dataset(2, 6, 3);
  AcquisitionContext ctx;
  ctx.current_model = std::make_shared<PreferenceGP>(fit_preference_gp(data, 3));
  ctx.best_observed = data.events().back().chosen;
  ctx.iteration = 7;
  ctx.ei_only = true;
  const TwoStepResult r = two_step_acquisition(ctx, data, p2(0.3, 0.3), {}, 1);
  EXPECT_FALSE(r.augmented);
  const PointMatrix Q = random_points(2, 1, 4);
  EXPECT_EQ(r.objective(Q)[0], TafAcquisition(ctx)(Q)[0]);
}

TEST(TwoStep, AugmentTreatsFirstPointAsChosen) {
  const PreferenceDataset data = random_dataset(2, 6, 3);
  AcquisitionContext ctx;
  ctx.current_model = std::make_shared<PreferenceGP>(fit_preference_gp(data, 3));
  ctx.best_observed = data.events().back().chosen;
  ctx.iteration = 7;
  ctx.ei_only = true;
  const ParamVector x1 = p2(0.9, 0.1);
  const std::vector<ParamVector> prev{p2(0.2, 0.2), p2(0.5, 0.6), p2(0.7, 0.4)};
  const TwoStepResult r = two_step_acquisition(ctx, data, x1, prev, 1);
  ASSERT_TRUE(r.augmented) << r.warning;
  EXPECT_TRUE(exactly_equal(r.best_observed, x1));
  // the refit model prefers x1 over the plane it beat
  SelectionEvent ev{x1, prev, data.last_iteration() + 1};
  const PreferenceGP refit = fit_preference_gp(data.with(ev), derive_seed(1, 1, 0), {}, ctx.current_model.get());
  for (const auto& p : prev) EXPECT_GT(refit.predict(x1).mean, refit.predict(p).mean);
  const PointMatrix Q = random_points(2, 6, 9);
  AcquisitionContext want = ctx;
  want.current_model = std::make_shared<PreferenceGP>(refit);
  want.best_observed = x1;
  EXPECT_LT((r.objective(Q) - TafAcquisition(want)(Q)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TwoStep, MonteCarloMatchesAugmentWhenWinnerIsCertain) {
  const PreferenceDataset data = random_dataset(2, 6, 3);
  const ParamVector x1 = p2(0.9, 0.1);
  const std::vector<ParamVector> prev{p2(0.2, 0.2), p2(0.5, 0.6), p2(0.7, 0.4)};
  AcquisitionContext ctx;
  ctx.current_model = pinned({x1, prev[0], prev[1], prev[2]}, {8.0, 0.0, 0.0, 0.0}, 0.1);
  ctx.best_observed = x1;
  ctx.iteration = 7;
  ctx.ei_only = true;
  TwoStepOptions mc;
  mc.mode = TwoStepMode::mc;
  mc.mc_samples = 10;
  const TwoStepResult a = two_step_acquisition(ctx, data, x1, prev, 5);
  const TwoStepResult b = two_step_acquisition(ctx, data, x1, prev, 5, mc);
  ASSERT_TRUE(a.augmented && b.augmented);
  EXPECT_TRUE(exactly_equal(b.best_observed, x1));
  const PointMatrix Q = random_points(2, 6, 10);
  EXPECT_LT((a.objective(Q) - b.objective(Q)).cwiseAbs().maxCoeff(), 1e-12);
}
