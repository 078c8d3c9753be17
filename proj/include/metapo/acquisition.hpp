#pragma once

// Acquisition functions: EI on the current model, transfer aggregation over
// a population of frozen models (TAF), decay scheduling, the two-step
// lookahead and a seeded multi-start maximizer over the unit cube.

#include "metapo/preference.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace metapo {

inline double normal_pdf(double z) { return 0.39894228040143267794 * std::exp(-0.5 * z * z); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

/// Closed-form EI for a Gaussian with the given mean and standard deviation.
inline double expected_improvement(double mean, double sd, double y_max) {
  const double diff = mean - y_max;
  if (!(sd > 0.0)) return std::max(0.0, diff);
  const double z = diff / sd;
  return std::max(0.0, diff * normal_cdf(z) + sd * normal_pdf(z));
}

inline double expected_improvement(const PreferenceGP& gp, const ParamVector& x, double y_max) {
  const auto p = gp.predict(x);
  return expected_improvement(p.mean, std::sqrt(p.variance), y_max);
}

inline Eigen::VectorXd expected_improvement(const PreferenceGP& gp, const PointMatrix& X, double y_max) {
  Eigen::VectorXd mean, var;
  gp.predict(X, mean, &var);
  Eigen::VectorXd out(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) out[i] = expected_improvement(mean[i], std::sqrt(var[i]), y_max);
  return out;
}

struct DecaySchedule {
  int d1 = 5;
  double d2 = 0.1;

  void validate() const {
    if (d1 < 0) throw InvalidInput("decay d1 must be >= 0");
    if (!(d2 > 0.0)) throw InvalidInput("decay d2 must be > 0");
  }
  /// First iteration from which d(k) is 0 for good.
  int zero_from() const { return d1 + static_cast<int>(std::ceil(1.0 / d2 - 1e-12)); }
};

inline double decay(const DecaySchedule& s, int k) {
  if (k < 1) throw InvalidInput("decay: k must be >= 1");
  if (k <= s.d1) return 1.0;
  const double v = 1.0 - static_cast<double>(k - s.d1) * s.d2;
  return v > 0.0 ? v : 0.0;
}

/// Frozen prior-user models with their transfer weights.
struct PopulationGallery {
  std::vector<std::shared_ptr<const PreferenceGP>> models;
  Eigen::VectorXd weights;
  std::vector<std::string> source_labels;

  std::size_t size() const noexcept { return models.size(); }
  bool empty() const noexcept { return models.empty(); }

  void add(std::shared_ptr<const PreferenceGP> model, std::string label = {}) {
    if (!models.empty() && model->dimension() != models.front()->dimension())
      throw InvalidInput("population model dimension mismatch");
    models.push_back(std::move(model));
    source_labels.push_back(std::move(label));
    weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(models.size()));
  }

  Eigen::Index dimension() const { return models.empty() ? 0 : models.front()->dimension(); }
};

/// w_i = 1 / (1 + mean posterior variance over probes), scaled so the largest is 1.
inline Eigen::VectorXd taf_m_weights(const PopulationGallery& gallery, const std::vector<ParamVector>& probes) {
  if (probes.empty()) throw InvalidInput("taf_m_weights needs probes");
  const auto M = static_cast<Eigen::Index>(gallery.size());
  Eigen::VectorXd w(M);
  if (M == 0) return w;
  PointMatrix P(probes.front().size(), static_cast<Eigen::Index>(probes.size()));
  for (std::size_t j = 0; j < probes.size(); ++j) P.col(static_cast<Eigen::Index>(j)) = probes[j];
  Eigen::VectorXd mean, var;
  for (Eigen::Index i = 0; i < M; ++i) {
    gallery.models[static_cast<std::size_t>(i)]->predict(P, mean, &var);
    w[i] = 1.0 / (1.0 + var.mean());
  }
  return w / w.maxCoeff();
}

/// Concordance of sign(a) with sign(b): 1 when equal, 0.5 when one side is tied, 0 otherwise.
inline double order_concordance(double a, double b) {
  const int sa = (a > 0.0) - (a < 0.0);
  const int sb = (b > 0.0) - (b < 0.0);
  if (sa == sb) return 1.0;
  if (sa == 0 || sb == 0) return 0.5;
  return 0.0;
}

/// Fraction of (chosen, rejected) pairs on which each population model orders
/// the pair like the current model does. Empty dataset gives uniform weights.
inline Eigen::VectorXd taf_r_weights(const PopulationGallery& gallery, const PreferenceGP& current,
                                     const PreferenceDataset& dataset) {
  const auto M = static_cast<Eigen::Index>(gallery.size());
  if (dataset.empty()) return Eigen::VectorXd::Ones(M);
  const IndexedData data = index_dataset(dataset);
  const Eigen::VectorXd mu_cur = current.predict_mean(data.points);
  Eigen::VectorXd w(M);
  for (Eigen::Index i = 0; i < M; ++i) {
    const Eigen::VectorXd mu = gallery.models[static_cast<std::size_t>(i)]->predict_mean(data.points);
    double agree = 0.0, total = 0.0;
    for (const auto& mem : data.members) {
      for (std::size_t r = 1; r < mem.size(); ++r) {
        agree += order_concordance(mu[mem[0]] - mu[mem[r]], mu_cur[mem[0]] - mu_cur[mem[r]]);
        total += 1.0;
      }
    }
    w[i] = total > 0.0 ? agree / total : 1.0;
  }
  return w;
}

enum class AcquisitionVariant { ei, taf_m, taf_r };

inline std::string to_string(AcquisitionVariant v) {
  switch (v) {
    case AcquisitionVariant::ei: return "ei";
    case AcquisitionVariant::taf_m: return "taf_m";
    case AcquisitionVariant::taf_r: return "taf_r";
  }
  return "?";
}

inline AcquisitionVariant acquisition_variant_from_string(const std::string& s) {
  if (s == "ei") return AcquisitionVariant::ei;
  if (s == "taf_m") return AcquisitionVariant::taf_m;
  if (s == "taf_r") return AcquisitionVariant::taf_r;
  throw ConfigError("unknown acquisition variant: " + s);
}

struct AcquisitionContext {
  std::shared_ptr<const PreferenceGP> current_model;
  std::shared_ptr<const PopulationGallery> gallery;
  /// Transfer weights, one per gallery model; empty means the gallery's own.
  Eigen::VectorXd weights;
  DecaySchedule schedule{};
  int iteration = 1;
  ParamVector best_observed;
  /// Pure EI on the current model; the gallery is ignored.
  bool ei_only = false;
};

/// Batch objective: one value per column.
using BatchObjective = std::function<Eigen::VectorXd(const PointMatrix&)>;

/// a_k(x) = (1 - d(k)) EI_cur(x) + sum_i d(k) w_i max(0, mu_i(x) - mu_i(x+)).
class TafAcquisition {
 public:
  explicit TafAcquisition(AcquisitionContext ctx) : ctx_(std::move(ctx)) {
    if (ctx_.iteration < 1) throw InvalidInput("iteration must be >= 1");
    const bool has_gallery = ctx_.gallery && !ctx_.gallery->empty() && !ctx_.ei_only;
    if (!ctx_.current_model && !has_gallery) throw InvalidState("acquisition needs a current model or a gallery");
    if (!ctx_.current_model && ctx_.iteration != 1 && has_gallery)
      throw InvalidState("current model absent after the first iteration");
    if (ctx_.best_observed.size() == 0) throw InvalidInput("best_observed is required");
    d_ = ctx_.ei_only ? 0.0 : (ctx_.current_model ? decay(ctx_.schedule, ctx_.iteration) : 1.0);
    if (!has_gallery) d_ = 0.0;
    if (ctx_.current_model) y_max_ = ctx_.current_model->predict(ctx_.best_observed).mean;
    if (has_gallery && d_ > 0.0) {
      const PopulationGallery& g = *ctx_.gallery;
      Eigen::VectorXd w = ctx_.weights.size() ? ctx_.weights : g.weights;
      if (!ctx_.current_model) w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(g.size()));
      if (w.size() != static_cast<Eigen::Index>(g.size())) throw InvalidInput("weights size does not match gallery");
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double wi = d_ * w[static_cast<Eigen::Index>(i)];
        if (wi <= 0.0) continue;
        terms_.push_back({g.models[i], wi, g.models[i]->predict(ctx_.best_observed).mean});
      }
    }
  }

  double decay_factor() const noexcept { return d_; }
  double current_y_max() const noexcept { return y_max_; }
  const AcquisitionContext& context() const noexcept { return ctx_; }

  Eigen::VectorXd operator()(const PointMatrix& X) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.cols());
    if (ctx_.current_model && d_ < 1.0) out += (1.0 - d_) * expected_improvement(*ctx_.current_model, X, y_max_);
    for (const auto& t : terms_) out.array() += t.weight * (t.model->predict_mean(X).array() - t.y_max).max(0.0);
    return out;
  }

  double operator()(const ParamVector& x) const { return (*this)(PointMatrix(x))[0]; }

 private:
  struct Term {
    std::shared_ptr<const PreferenceGP> model;
    double weight;
    double y_max;
  };
  AcquisitionContext ctx_;
  double d_ = 0.0;
  double y_max_ = 0.0;
  std::vector<Term> terms_;
};

inline double taf_acquisition(const AcquisitionContext& ctx, const ParamVector& x) { return TafAcquisition(ctx)(x); }

struct MaximizerOptions {
  int starts = 80;
  int iters = 100;
  double initial_step = 0.1;
  double min_step = 1e-6;
};

struct MaximizeResult {
  ParamVector x;
  double value = -std::numeric_limits<double>::infinity();
};

/// Multi-start coordinate pattern search over [0,1]^d. Starts are `starts`
/// seeded uniform draws followed by `extra_starts`. Each start polls x +/- step
/// along every axis, moves to the best strictly better poll, and halves the
/// step when none improves. The best final value wins; ties go to the lowest
/// start index.
inline MaximizeResult maximize_acquisition(const BatchObjective& objective, Eigen::Index dim, std::uint64_t seed,
                                           const MaximizerOptions& opt = {},
                                           const std::vector<ParamVector>& extra_starts = {}) {
  if (dim < 1) throw InvalidInput("maximize_acquisition: dimension must be >= 1");
  Rng rng(derive_seed(seed, 0x6d6178u));
  const int n_uniform = std::max(0, opt.starts);
  const Eigen::Index S = n_uniform + static_cast<Eigen::Index>(extra_starts.size());
  if (S == 0) throw InvalidInput("maximize_acquisition: no starts");
  PointMatrix X(dim, S);
  for (int s = 0; s < n_uniform; ++s) X.col(s) = rng.uniform_point(dim);
  for (std::size_t e = 0; e < extra_starts.size(); ++e) {
    if (extra_starts[e].size() != dim) throw InvalidInput("extra start has wrong dimension");
    X.col(n_uniform + static_cast<Eigen::Index>(e)) = clip_to_cube(extra_starts[e]);
  }
  Eigen::VectorXd f = objective(X);
  Eigen::VectorXd step = Eigen::VectorXd::Constant(S, opt.initial_step);
  std::vector<Eigen::Index> active;
  for (Eigen::Index s = 0; s < S; ++s) active.push_back(s);

  const Eigen::Index polls = 2 * dim;
  PointMatrix P;
  for (int it = 0; it < opt.iters && !active.empty(); ++it) {
    P.resize(dim, polls * static_cast<Eigen::Index>(active.size()));
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Eigen::Index s = active[a];
      for (Eigen::Index j = 0; j < dim; ++j) {
        for (int sign = 0; sign < 2; ++sign) {
          const Eigen::Index col = static_cast<Eigen::Index>(a) * polls + 2 * j + sign;
          P.col(col) = X.col(s);
          const double v = X(j, s) + (sign == 0 ? step[s] : -step[s]);
          P(j, col) = std::min(1.0, std::max(0.0, v));
        }
      }
    }
    const Eigen::VectorXd fp = objective(P);
    std::vector<Eigen::Index> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Eigen::Index s = active[a];
      Eigen::Index best = -1;
      double best_f = f[s];
      for (Eigen::Index c = 0; c < polls; ++c) {
        const double v = fp[static_cast<Eigen::Index>(a) * polls + c];
        if (v > best_f) {
          best_f = v;
          best = c;
        }
      }
      if (best >= 0) {
        X.col(s) = P.col(static_cast<Eigen::Index>(a) * polls + best);
        f[s] = best_f;
      } else {
        step[s] *= 0.5;
      }
      if (step[s] >= opt.min_step) still.push_back(s);
    }
    active.swap(still);
  }
  MaximizeResult res;
  for (Eigen::Index s = 0; s < S; ++s) {
    if (s == 0 || f[s] > res.value) {
      res.value = f[s];
      res.x = X.col(s);
    }
  }
  return res;
}

/// Scalar-callable convenience overload.
inline MaximizeResult maximize_acquisition(const std::function<double(const ParamVector&)>& objective,
                                           Eigen::Index dim, std::uint64_t seed, const MaximizerOptions& opt = {}) {
  const BatchObjective batch = [&objective](const PointMatrix& X) {
    Eigen::VectorXd out(X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) out[i] = objective(X.col(i));
    return out;
  };
  return maximize_acquisition(batch, dim, seed, opt);
}

enum class TwoStepMode { augment, mc };

struct TwoStepOptions {
  TwoStepMode mode = TwoStepMode::augment;
  int mc_samples = 10;
  AcquisitionVariant variant = AcquisitionVariant::taf_r;
  FitOptions fit{};
};

struct TwoStepResult {
  BatchObjective objective;
  /// Best point used by the returned acquisition (x1 after augmentation).
  ParamVector best_observed;
  bool augmented = false;
  std::string warning;
};

namespace detail {

inline Eigen::VectorXd transfer_weights(AcquisitionVariant variant, const PopulationGallery& gallery,
                                        const PreferenceGP& current, const PreferenceDataset& data,
                                        const std::vector<ParamVector>& probes) {
  if (variant == AcquisitionVariant::taf_m) return taf_m_weights(gallery, probes);
  return taf_r_weights(gallery, current, data);
}

}  // namespace detail

/// Second-point acquisition given the already chosen x1. Augment mode refits
/// on D + {x1 > previous_plane} and rebuilds the acquisition; MC mode samples
/// the joint posterior at {x1} + previous_plane, takes the sampled winner as
/// the hypothetical choice and averages the resulting acquisitions.
inline TwoStepResult two_step_acquisition(const AcquisitionContext& ctx, const PreferenceDataset& dataset,
                                          const ParamVector& x1, const std::vector<ParamVector>& previous_plane,
                                          std::uint64_t seed, const TwoStepOptions& opt = {}) {
  TwoStepResult out;
  out.best_observed = ctx.best_observed;
  auto base = std::make_shared<TafAcquisition>(ctx);
  out.objective = [base](const PointMatrix& X) { return (*base)(X); };
  if (previous_plane.empty() || !ctx.current_model) return out;

  std::vector<ParamVector> others;
  for (const auto& p : previous_plane)
    if (!exactly_equal(p, x1)) others.push_back(p);
  if (others.empty()) return out;

  const bool use_gallery = ctx.gallery && !ctx.gallery->empty() && !ctx.ei_only;
  const auto build = [&](const ParamVector& winner, std::uint64_t fit_seed) -> std::shared_ptr<TafAcquisition> {
    SelectionEvent ev;
    ev.chosen = winner;
    ev.iteration_index = dataset.last_iteration() + 1;
    for (const auto& p : previous_plane)
      if (!exactly_equal(p, winner)) ev.rejected.push_back(p);
    if (!exactly_equal(x1, winner)) ev.rejected.push_back(x1);
    const PreferenceDataset augmented = dataset.with(std::move(ev));
    FitStatus st;
    auto model = std::make_shared<const PreferenceGP>(
        fit_preference_gp(augmented, fit_seed, opt.fit, ctx.current_model.get(), &st));
    if (!st.ok) return nullptr;
    AcquisitionContext c = ctx;
    c.current_model = model;
    c.best_observed = winner;
    if (use_gallery) c.weights = detail::transfer_weights(opt.variant, *ctx.gallery, *model, augmented, previous_plane);
    return std::make_shared<TafAcquisition>(std::move(c));
  };

  try {
    if (opt.mode == TwoStepMode::augment) {
      auto acq = build(x1, derive_seed(seed, 1, 0));
      if (!acq) {
        out.warning = "two-step refit failed; using unaugmented acquisition";
        return out;
      }
      out.objective = [acq](const PointMatrix& X) { return (*acq)(X); };
      out.best_observed = x1;
      out.augmented = true;
      return out;
    }
    // Monte Carlo: sample latent values at {x1} + previous plane.
    PointMatrix Q(x1.size(), static_cast<Eigen::Index>(others.size() + 1));
    Q.col(0) = x1;
    for (std::size_t i = 0; i < others.size(); ++i) Q.col(static_cast<Eigen::Index>(i + 1)) = others[i];
    const PreferenceGP& gp = *ctx.current_model;
    Eigen::VectorXd mean, var;
    gp.predict(Q, mean, &var);
    const Eigen::MatrixXd Kq = gp.cross_kernel(Q);  // n x q
    // Posterior covariance at Q: k(Q,Q) - Kq^T (K + jitter)^{-1} Kq, computed via the model's factor.
    Eigen::MatrixXd cov = gram_matrix(Q, gp.hyperparams(), false);
    if (gp.num_points() > 0) {
      KernelHyperparams h = gp.hyperparams();
      Eigen::MatrixXd Kn = gram_matrix(gp.observed_points(), h, false);
      Kn.diagonal().array() += gp.jitter();
      const Eigen::LLT<Eigen::MatrixXd> llt(Kn);
      const Eigen::MatrixXd V = llt.matrixL().solve(Kq);
      cov -= V.transpose() * V;
    }
    cov = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd root = eig.eigenvectors() * ev.cwiseSqrt().asDiagonal();
    Rng rng(derive_seed(seed, 0x6d63u));
    std::vector<int> counts(static_cast<std::size_t>(Q.cols()), 0);
    const int S = std::max(1, opt.mc_samples);
    Eigen::VectorXd z(Q.cols());
    for (int s = 0; s < S; ++s) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
      const Eigen::VectorXd sample = mean + root * z;
      Eigen::Index win = 0;
      for (Eigen::Index i = 1; i < sample.size(); ++i)
        if (sample[i] > sample[win]) win = i;
      ++counts[static_cast<std::size_t>(win)];
    }
    std::vector<std::pair<double, std::shared_ptr<TafAcquisition>>> parts;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      const ParamVector winner = Q.col(static_cast<Eigen::Index>(i));
      auto acq = build(winner, derive_seed(seed, 1, i));
      if (!acq) {
        out.warning = "two-step refit failed; using unaugmented acquisition";
        return out;
      }
      parts.emplace_back(static_cast<double>(counts[i]) / S, std::move(acq));
    }
    out.objective = [parts](const PointMatrix& X) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(X.cols());
      for (const auto& [w, acq] : parts) acc += w * (*acq)(X);
      return acc;
    };
    out.best_observed = counts[0] == S ? x1 : ctx.best_observed;
    out.augmented = true;
    return out;
  } catch (const NumericalFailure& e) {
    out.warning = std::string("two-step refit failed: ") + e.what();
    return out;
  }
}

}  // namespace metapo
