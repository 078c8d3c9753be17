#pragma once

// Gaussian-process machinery for preference models: ARD Matern 5/2 kernel,
// posterior prediction conditioned on latent goodness values, and the joint
// log posterior over (latents, log-hyperparameters) used for MAP fitting.

#include "metapo/core.hpp"
#include "metapo/dataset.hpp"

#include <atomic>
#include <cmath>
#include <string>
#include <utility>

namespace metapo {

inline constexpr double kSqrt5 = 2.23606797749978969640917366873128;
inline constexpr double kMinNoise = 1e-8;

struct KernelHyperparams {
  double signal_variance = 1.0;
  Eigen::VectorXd length_scales;
  double noise_variance = 1e-6;

  Eigen::Index dimension() const noexcept { return length_scales.size(); }

  void validate(Eigen::Index dim) const {
    if (length_scales.size() != dim) throw InvalidInput("length_scales size does not match dimension");
    if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
      throw InvalidInput("signal_variance must be positive");
    if (!(noise_variance >= kMinNoise) || !std::isfinite(noise_variance))
      throw InvalidInput("noise_variance must be >= 1e-8");
    if (!(length_scales.array() > 0.0).all() || !length_scales.allFinite())
      throw InvalidInput("length_scales must be positive");
  }

  static KernelHyperparams isotropic(Eigen::Index dim, double length_scale, double signal_variance = 1.0,
                                     double noise = 1e-6) {
    KernelHyperparams h;
    h.signal_variance = signal_variance;
    h.length_scales = Eigen::VectorXd::Constant(dim, length_scale);
    h.noise_variance = noise;
    return h;
  }
};

/// Unit-variance Matern 5/2 profile at scaled distance r.
inline double matern52(double r) {
  const double s = kSqrt5 * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// Noise-free covariance between two designs.
inline double kernel_eval(const ParamVector& a, const ParamVector& b, const KernelHyperparams& h) {
  if (a.size() != b.size() || a.size() != h.dimension())
    throw InvalidInput("kernel_eval: dimension mismatch");
  double r2 = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double t = (a[j] - b[j]) / h.length_scales[j];
    r2 += t * t;
  }
  return h.signal_variance * matern52(std::sqrt(r2));
}

/// Gram matrix over the columns of X; `with_noise` adds noise_variance on the diagonal.
inline Eigen::MatrixXd gram_matrix(const PointMatrix& X, const KernelHyperparams& h, bool with_noise) {
  if (X.rows() != h.dimension()) throw InvalidInput("gram_matrix: dimension mismatch");
  const Eigen::Index n = X.cols();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    K(b, b) = h.signal_variance + (with_noise ? h.noise_variance : 0.0);
    for (Eigen::Index a = b + 1; a < n; ++a) {
      const double v = kernel_eval(X.col(a), X.col(b), h);
      K(a, b) = v;
      K(b, a) = v;
    }
  }
  return K;
}

/// Number of posterior variances clamped at zero, process-wide.
inline std::atomic<std::size_t>& variance_clamp_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

/// Latent goodness values at the distinct observed points of a dataset.
struct LatentGoodness {
  Eigen::VectorXd values;
};

class PreferenceGP {
 public:
  struct Prediction {
    double mean;
    double variance;
  };

  PreferenceGP() = default;

  PreferenceGP(KernelHyperparams hyperparams, PointMatrix observed_points, Eigen::VectorXd latent,
               std::string dataset_ref = {}, double prior_mean = 0.0)
      : hyper_(std::move(hyperparams)),
        points_(std::move(observed_points)),
        latent_(std::move(latent)),
        dataset_ref_(std::move(dataset_ref)),
        prior_mean_(prior_mean) {
    hyper_.validate(hyper_.dimension());
    if (points_.cols() > 0 && points_.rows() != hyper_.dimension())
      throw InvalidInput("observed points dimension does not match hyperparameters");
    if (points_.cols() == 0) points_.resize(hyper_.dimension(), 0);
    if (latent_.size() != points_.cols()) throw InvalidInput("latent count must equal number of observed points");
    if (!latent_.allFinite()) throw InvalidInput("latent values must be finite");
    factorize();
  }

  /// Model with no observations: predicts the prior everywhere.
  static PreferenceGP prior_only(const KernelHyperparams& h, std::string dataset_ref = {}) {
    return PreferenceGP(h, PointMatrix(h.dimension(), 0), Eigen::VectorXd(0), std::move(dataset_ref));
  }

  Eigen::Index dimension() const noexcept { return hyper_.dimension(); }
  Eigen::Index num_points() const noexcept { return points_.cols(); }
  const KernelHyperparams& hyperparams() const noexcept { return hyper_; }
  const PointMatrix& observed_points() const noexcept { return points_; }
  const Eigen::VectorXd& latent() const noexcept { return latent_; }
  const std::string& dataset_ref() const noexcept { return dataset_ref_; }
  double prior_mean() const noexcept { return prior_mean_; }
  /// Diagonal jitter actually used by the factorization (>= noise_variance).
  double jitter() const noexcept { return jitter_; }

  Prediction predict(const ParamVector& x) const {
    Eigen::VectorXd mean, var;
    predict(PointMatrix(x), mean, &var);
    return {mean[0], var[0]};
  }

  /// Posterior mean (and optionally variance) at every column of X.
  void predict(const PointMatrix& X, Eigen::VectorXd& mean, Eigen::VectorXd* variance) const {
    if (X.rows() != dimension()) throw InvalidInput("predict: dimension mismatch");
    const Eigen::Index m = X.cols();
    if (num_points() == 0) {
      mean = Eigen::VectorXd::Constant(m, prior_mean_);
      if (variance) *variance = Eigen::VectorXd::Constant(m, hyper_.signal_variance);
      return;
    }
    mean.resize(m);
    if (variance) variance->resize(m);
    // Column blocks keep the n x block temporaries cache resident.
    constexpr Eigen::Index kBlock = 128;
    Eigen::MatrixXd V;
    for (Eigen::Index c0 = 0; c0 < m; c0 += kBlock) {
      const Eigen::Index bc = std::min(kBlock, m - c0);
      const Eigen::MatrixXd Ks = cross_kernel(X.middleCols(c0, bc));  // n x bc
      mean.segment(c0, bc).noalias() = Ks.transpose() * alpha_;
      if (!variance) continue;
      if (chol_inv_.size()) {
        V.noalias() = chol_inv_ * Ks;
      } else {
        V = Ks;
        chol_.triangularView<Eigen::Lower>().solveInPlace(V);
      }
      variance->segment(c0, bc) = hyper_.signal_variance - V.colwise().squaredNorm().transpose().array();
    }
    mean.array() += prior_mean_;
    if (!variance) return;
    for (Eigen::Index i = 0; i < m; ++i) {
      if ((*variance)[i] < 0.0) {
        (*variance)[i] = 0.0;
        variance_clamp_counter().fetch_add(1, std::memory_order_relaxed);
      }
    }
  }

  Eigen::VectorXd predict_mean(const PointMatrix& X) const {
    Eigen::VectorXd mean;
    predict(X, mean, nullptr);
    return mean;
  }

  /// Noise-free kernel between observed points (rows) and columns of X.
  template <class Derived>
  Eigen::MatrixXd cross_kernel(const Eigen::MatrixBase<Derived>& X) const {
    const Eigen::VectorXd inv_ls = hyper_.length_scales.cwiseInverse();
    const Eigen::MatrixXd Xs = inv_ls.asDiagonal() * X;
    const Eigen::VectorXd xs_norm = Xs.colwise().squaredNorm().transpose();
    Eigen::MatrixXd K(num_points(), X.cols());
    K.noalias() = scaled_points_.transpose() * Xs;
    const double sf2 = hyper_.signal_variance;
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      auto c = K.col(j).array();
      c = kSqrt5 * (scaled_norms_.array() + xs_norm[j] - 2.0 * c).max(0.0).sqrt();
      c = sf2 * (1.0 + c * (1.0 + c * (1.0 / 3.0))) * (-c).exp();
    }
    return K;
  }

 private:
  static constexpr Eigen::Index kInverseFactorLimit = 300;

  void factorize() {
    const Eigen::Index n = num_points();
    const Eigen::VectorXd inv_ls = hyper_.length_scales.cwiseInverse();
    scaled_points_ = inv_ls.asDiagonal() * points_;
    scaled_norms_ = scaled_points_.colwise().squaredNorm().transpose();
    jitter_ = hyper_.noise_variance;
    if (n == 0) {
      chol_.resize(0, 0);
      chol_inv_.resize(0, 0);
      alpha_.resize(0);
      return;
    }
    const Eigen::MatrixXd K0 = gram_matrix(points_, hyper_, false);
    double extra = 0.0;
    for (int escalation = 0;; ++escalation) {
      Eigen::MatrixXd K = K0;
      K.diagonal().array() += hyper_.noise_variance + extra;
      Eigen::LLT<Eigen::MatrixXd> llt(K);
      if (llt.info() == Eigen::Success) {
        chol_ = llt.matrixL();
        if (n <= kInverseFactorLimit)
          chol_inv_ = chol_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
        else
          chol_inv_.resize(0, 0);
        jitter_ = hyper_.noise_variance + extra;
        alpha_ = llt.solve((latent_.array() - prior_mean_).matrix());
        return;
      }
      if (escalation == 3) throw NumericalFailure("Gram matrix not positive definite", "cholesky");
      extra = (extra == 0.0 ? std::max(hyper_.noise_variance, kMinNoise) : extra) * 10.0;
    }
  }

  KernelHyperparams hyper_;
  PointMatrix points_;
  Eigen::VectorXd latent_;
  std::string dataset_ref_;
  double prior_mean_ = 0.0;
  double jitter_ = 0.0;
  Eigen::MatrixXd scaled_points_;
  Eigen::VectorXd scaled_norms_;
  Eigen::MatrixXd chol_;
  Eigen::MatrixXd chol_inv_;  // explicit L^-1 for small n: a GEMM beats the triangular solve there
  Eigen::VectorXd alpha_;
};

/// Log-normal priors on the kernel hyperparameters (noise is held fixed).
struct HyperPrior {
  double log_signal_mean = 0.0;
  double log_signal_sd = 1.0;
  double log_length_mean = std::log(0.2);
  double log_length_sd = 1.0;
  double noise_variance = 1e-6;
};

struct LogPosterior {
  double value = 0.0;
  /// Ordered as [latent (n), log signal_variance, log length_scales (d)].
  Eigen::VectorXd grad;
};

namespace detail {

inline double log_normal_density(double x, double mean, double sd, double* dx) {
  const double z = (x - mean) / sd;
  if (dx) *dx = -z / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

inline double log_sum_exp(const Eigen::VectorXd& g, const std::vector<int>& idx, Eigen::VectorXd* probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i : idx) mx = std::max(mx, g[i]);
  double s = 0.0;
  for (int i : idx) s += std::exp(g[i] - mx);
  if (probs) {
    probs->resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) (*probs)[static_cast<Eigen::Index>(k)] = std::exp(g[idx[k]] - mx) / s;
  }
  return mx + std::log(s);
}


// Gram matrix on pre-scaled points (columns of Xs = X / l) plus the matrix E
// with dk_ab/dlog l_j = E_ab * (Xs_ja - Xs_jb)^2.
inline void gram_with_derivative(const Eigen::MatrixXd& Xs, double sf2, double noise, Eigen::MatrixXd& K,
                                 Eigen::MatrixXd& E) {
  const Eigen::Index n = Xs.cols();
  K.resize(n, n);
  E.resize(n, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    K(b, b) = sf2 + noise;
    E(b, b) = 0.0;
    for (Eigen::Index a = b + 1; a < n; ++a) {
      const double s = kSqrt5 * (Xs.col(a) - Xs.col(b)).norm();
      const double ex = std::exp(-s);
      K(a, b) = K(b, a) = sf2 * (1.0 + s + s * s / 3.0) * ex;
      E(a, b) = E(b, a) = sf2 * (5.0 / 3.0) * (1.0 + s) * ex;
    }
  }
}

// sum_ab R_ab dK_ab/dlog l_j for symmetric R.
inline Eigen::VectorXd length_scale_gradient(const Eigen::MatrixXd& Xs, const Eigen::MatrixXd& R,
                                             const Eigen::MatrixXd& E) {
  const Eigen::Index n = Xs.cols();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Xs.rows());
  for (Eigen::Index b = 0; b < n; ++b) {
    for (Eigen::Index a = b + 1; a < n; ++a) {
      const double w = 2.0 * R(a, b) * E(a, b);
      if (w == 0.0) continue;
      out.array() += w * (Xs.col(a) - Xs.col(b)).array().square();
    }
  }
  return out;
}

}  // namespace detail

/// log p(D|g) + log p(g|theta) + log p(theta) for a pre-indexed dataset, with
/// the gradient w.r.t. latents and log-hyperparameters.
inline LogPosterior log_posterior_indexed(const IndexedData& data, const KernelHyperparams& h,
                                          const Eigen::VectorXd& latent, const HyperPrior& prior = {}) {
  const Eigen::Index n = data.size();
  const Eigen::Index d = h.dimension();
  if (latent.size() != n) throw InvalidInput("latent length must equal distinct point count");
  if (n > 0 && data.points.rows() != d) throw InvalidInput("hyperparameter dimension mismatch");

  LogPosterior out;
  out.grad = Eigen::VectorXd::Zero(n + 1 + d);

  // BTL likelihood, one multinomial term per event.
  double loglik = 0.0;
  Eigen::VectorXd probs;
  for (const auto& members : data.members) {
    const double lse = detail::log_sum_exp(latent, members, &probs);
    loglik += latent[members[0]] - lse;
    out.grad[members[0]] += 1.0;
    for (std::size_t k = 0; k < members.size(); ++k) out.grad[members[k]] -= probs[static_cast<Eigen::Index>(k)];
  }
  if (!std::isfinite(loglik)) throw NumericalFailure("non-finite log likelihood", "likelihood");

  // Hyperparameter prior.
  double logprior = 0.0;
  {
    double dx = 0.0;
    logprior += detail::log_normal_density(std::log(h.signal_variance), prior.log_signal_mean, prior.log_signal_sd, &dx);
    out.grad[n] += dx;
    for (Eigen::Index j = 0; j < d; ++j) {
      logprior += detail::log_normal_density(std::log(h.length_scales[j]), prior.log_length_mean, prior.log_length_sd, &dx);
      out.grad[n + 1 + j] += dx;
    }
  }
  if (!std::isfinite(logprior)) throw NumericalFailure("non-finite hyperparameter prior", "hyper_prior");

  if (n == 0) {
    out.value = loglik + logprior;
    return out;
  }

  // GP prior on the latents: N(g; 0, K).
  const double noise = h.noise_variance;
  const Eigen::MatrixXd Xs = h.length_scales.cwiseInverse().asDiagonal() * data.points;
  Eigen::MatrixXd K, E;
  detail::gram_with_derivative(Xs, h.signal_variance, noise, K, E);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalFailure("Gram matrix not positive definite", "cholesky");
  const Eigen::VectorXd alpha = llt.solve(latent);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
  logdet *= 2.0;
  const double quad = latent.dot(alpha);
  const double loggp = -0.5 * quad - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  if (!std::isfinite(loggp)) throw NumericalFailure("non-finite GP prior term", "gp_prior");

  out.grad.head(n) -= alpha;

  const Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  // d/d log sf2: K - noise I scales with sf2.
  out.grad[n] += 0.5 * (quad - noise * alpha.squaredNorm()) - 0.5 * (static_cast<double>(n) - noise * Kinv.trace());
  // d/d log l_j = 0.5 sum_ab (alpha alpha^T - Kinv)_ab dK_ab/dlog l_j
  const Eigen::MatrixXd R = 0.5 * (alpha * alpha.transpose() - Kinv);
  const Eigen::VectorXd glen = detail::length_scale_gradient(Xs, R, E);
  out.grad.tail(d) += glen;

  out.value = loglik + loggp + logprior;
  if (!std::isfinite(out.value)) throw NumericalFailure("non-finite log posterior", "total");
  return out;
}

inline LogPosterior log_posterior_and_grad(const PreferenceDataset& dataset, const KernelHyperparams& h,
                                           const LatentGoodness& latent, const HyperPrior& prior = {}) {
  return log_posterior_indexed(index_dataset(dataset), h, latent.values, prior);
}

}  // namespace metapo
