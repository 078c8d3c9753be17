#pragma once

// BTL choice probabilities and MAP fitting of preference models.

#include "metapo/dataset.hpp"
#include "metapo/gp.hpp"
#include "metapo/lbfgs.hpp"

#include <optional>
#include <string>

namespace metapo {

/// exp(g_c) / sum_j exp(g_j) with max subtraction.
inline double btl_choice_probability(const Eigen::VectorXd& goodness, int chosen_index) {
  if (goodness.size() < 2) throw InvalidInput("btl_choice_probability needs at least 2 candidates");
  if (chosen_index < 0 || chosen_index >= goodness.size()) throw InvalidInput("chosen_index out of range");
  const double mx = goodness.maxCoeff();
  const double denom = (goodness.array() - mx).exp().sum();
  return std::exp(goodness[chosen_index] - mx) / denom;
}

/// Laplace approximation to log p(D | theta) + log p(theta), with the latent
/// mode at fixed theta (the conditional maximizer of the log posterior above).
struct LaplaceEvidence {
  double value = 0.0;
  /// Gradient w.r.t. [log signal_variance, log length_scales].
  Eigen::VectorXd grad;
  Eigen::VectorXd mode;
  /// K^{-1} mode, equal to the likelihood gradient at the mode.
  Eigen::VectorXd alpha;
  int newton_steps = 0;
};

namespace detail {

inline double btl_loglik(const IndexedData& data, const Eigen::VectorXd& g, Eigen::VectorXd* grad,
                         Eigen::MatrixXd* W, std::vector<Eigen::VectorXd>* probs) {
  const Eigen::Index n = data.size();
  if (grad) grad->setZero(n);
  if (W) W->setZero(n, n);
  if (probs) probs->resize(data.members.size());
  double total = 0.0;
  Eigen::VectorXd p;
  for (std::size_t e = 0; e < data.members.size(); ++e) {
    const auto& mem = data.members[e];
    total += g[mem[0]] - log_sum_exp(g, mem, &p);
    if (grad) {
      (*grad)[mem[0]] += 1.0;
      for (std::size_t a = 0; a < mem.size(); ++a) (*grad)[mem[a]] -= p[static_cast<Eigen::Index>(a)];
    }
    if (W) {
      for (std::size_t a = 0; a < mem.size(); ++a) {
        const double pa = p[static_cast<Eigen::Index>(a)];
        (*W)(mem[a], mem[a]) += pa;
        for (std::size_t b = 0; b < mem.size(); ++b) (*W)(mem[a], mem[b]) -= pa * p[static_cast<Eigen::Index>(b)];
      }
    }
    if (probs) (*probs)[e] = p;
  }
  return total;
}

}  // namespace detail

inline LaplaceEvidence laplace_evidence(const IndexedData& data, const KernelHyperparams& h,
                                        const HyperPrior& prior = {}, const Eigen::VectorXd* alpha_init = nullptr,
                                        bool need_grad = true) {
  const Eigen::Index n = data.size();
  const Eigen::Index d = h.dimension();
  LaplaceEvidence out;
  out.grad = Eigen::VectorXd::Zero(1 + d);

  double logprior = 0.0, dx = 0.0;
  logprior += detail::log_normal_density(std::log(h.signal_variance), prior.log_signal_mean, prior.log_signal_sd, &dx);
  out.grad[0] = dx;
  for (Eigen::Index j = 0; j < d; ++j) {
    logprior += detail::log_normal_density(std::log(h.length_scales[j]), prior.log_length_mean, prior.log_length_sd, &dx);
    out.grad[1 + j] = dx;
  }
  if (n == 0) {
    out.value = logprior;
    out.mode.resize(0);
    out.alpha.resize(0);
    return out;
  }

  const double noise = h.noise_variance;
  const Eigen::MatrixXd Xs = h.length_scales.cwiseInverse().asDiagonal() * data.points;
  Eigen::MatrixXd K, E;
  detail::gram_with_derivative(Xs, h.signal_variance, noise, K, E);
  const Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalFailure("Gram matrix not positive definite", "cholesky");
  const Eigen::MatrixXd L = llt.matrixL();

  // Newton ascent on psi(v) = loglik(L v) - |v|^2 / 2 (whitened latents).
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  if (alpha_init && alpha_init->size() == n) v = L.transpose() * *alpha_init;
  Eigen::VectorXd g = L * v, grad_ll, dv, v_try;
  Eigen::MatrixXd W, A;
  Eigen::LLT<Eigen::MatrixXd> llt_a;
  double ll = 0.0;
  for (int step = 0;; ++step) {
    ll = detail::btl_loglik(data, g, &grad_ll, &W, nullptr);
    const Eigen::VectorXd grad_v = L.transpose() * grad_ll - v;
    A = L.transpose() * (W * L);
    A.diagonal().array() += 1.0;
    llt_a.compute(A);
    if (llt_a.info() != Eigen::Success) throw NumericalFailure("Laplace Hessian not positive definite", "laplace");
    out.newton_steps = step;
    if (grad_v.lpNorm<Eigen::Infinity>() < 1e-10 || step >= 100) break;
    dv = llt_a.solve(grad_v);
    const double psi = ll - 0.5 * v.squaredNorm();
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      v_try = v + t * dv;
      const Eigen::VectorXd g_try = L * v_try;
      const double psi_try = detail::btl_loglik(data, g_try, nullptr, nullptr, nullptr) - 0.5 * v_try.squaredNorm();
      if (psi_try >= psi) {
        moved = psi_try > psi || t == 1.0;
        v = v_try;
        g = g_try;
        break;
      }
    }
    if (!moved) {
      ll = detail::btl_loglik(data, g, &grad_ll, &W, nullptr);
      A = L.transpose() * (W * L);
      A.diagonal().array() += 1.0;
      llt_a.compute(A);
      break;
    }
  }
  double half_logdet_a = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) half_logdet_a += std::log(llt_a.matrixLLT()(i, i));
  out.value = ll - 0.5 * v.squaredNorm() - half_logdet_a + logprior;
  if (!std::isfinite(out.value)) throw NumericalFailure("non-finite Laplace evidence", "laplace");
  out.mode = g;
  out.alpha = grad_ll;
  if (!need_grad) return out;

  // C = (K^{-1} + W)^{-1} = L A^{-1} L^T.
  Eigen::MatrixXd M = L.transpose();
  llt_a.matrixL().solveInPlace(M);
  const Eigen::MatrixXd C = M.transpose() * M;
  // s_k = d log|I + K W| / d g_k through W's dependence on the mode.
  std::vector<Eigen::VectorXd> probs;
  detail::btl_loglik(data, g, nullptr, nullptr, &probs);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  for (std::size_t e = 0; e < data.members.size(); ++e) {
    const auto& mem = data.members[e];
    const Eigen::VectorXd& p = probs[e];
    const auto m = static_cast<Eigen::Index>(mem.size());
    Eigen::VectorXd cp = Eigen::VectorXd::Zero(m);
    double diag_p = 0.0;
    for (Eigen::Index a = 0; a < m; ++a) {
      diag_p += C(mem[a], mem[a]) * p[a];
      for (Eigen::Index b = 0; b < m; ++b) cp[a] += C(mem[a], mem[b]) * p[b];
    }
    const double pcp = p.dot(cp);
    for (Eigen::Index a = 0; a < m; ++a)
      s[mem[a]] += p[a] * (C(mem[a], mem[a]) - diag_p - 2.0 * cp[a] + 2.0 * pcp);
  }
  const Eigen::VectorXd& alpha = out.alpha;
  const Eigen::VectorXd r = s - W * (C * s);
  const Eigen::MatrixXd WC = W * C;
  Eigen::MatrixXd R = 0.5 * (alpha * alpha.transpose()) - 0.5 * (W - WC * W) -
                      0.25 * (r * alpha.transpose() + alpha * r.transpose());
  Eigen::MatrixXd dK_sf = K;
  dK_sf.diagonal().array() -= noise;
  out.grad[0] += (R.array() * dK_sf.array()).sum();
  out.grad.tail(d) += detail::length_scale_gradient(Xs, R, E);
  return out;
}

struct FitOptions {
  int restarts = 3;
  LbfgsOptions optimizer{};
  HyperPrior prior{};
  /// Spread (in log space) of restart hyperparameters around the first start.
  double restart_spread = 0.5;
};

struct FitStatus {
  bool ok = true;
  std::string warning;
  double log_evidence = -std::numeric_limits<double>::infinity();
  int restarts_succeeded = 0;
};

/// MAP fit. Hyperparameters maximize the Laplace-approximate posterior
/// p(theta | D); latents are the posterior mode given those hyperparameters.
/// Restart 0 starts at the prior mode (or at `warm_start`'s hyperparameters);
/// later restarts are seeded perturbations of it. Best restart wins, ties to
/// the earliest. If every restart fails the prior-only model is returned and
/// `status->ok` is false.
inline PreferenceGP fit_preference_gp(const PreferenceDataset& dataset, std::uint64_t seed,
                                      const FitOptions& options = {}, const PreferenceGP* warm_start = nullptr,
                                      FitStatus* status = nullptr) {
  if (dataset.empty()) throw InvalidInput("fit_preference_gp needs at least one event");
  const IndexedData data = index_dataset(dataset);
  const Eigen::Index d = dataset.dimension();
  const double noise = options.prior.noise_variance;

  const auto hyper_of = [&](const Eigen::VectorXd& u) {
    KernelHyperparams h;
    h.signal_variance = std::exp(u[0]);
    h.length_scales = u.tail(d).array().exp();
    h.noise_variance = noise;
    return h;
  };

  KernelHyperparams base;
  base.signal_variance = std::exp(options.prior.log_signal_mean);
  base.length_scales = Eigen::VectorXd::Constant(d, std::exp(options.prior.log_length_mean));
  base.noise_variance = noise;
  if (warm_start && warm_start->dimension() == d && warm_start->num_points() > 0) {
    base = warm_start->hyperparams();
    base.noise_variance = noise;
  }

  Rng rng(derive_seed(seed, 0x6669u));
  FitStatus local;
  double best_value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_u;
  const int restarts = std::max(1, options.restarts);
  for (int r = 0; r < restarts; ++r) {
    Eigen::VectorXd u0(1 + d);
    u0[0] = std::log(base.signal_variance);
    u0.tail(d) = base.length_scales.array().log();
    if (r > 0)
      for (Eigen::Index j = 0; j < u0.size(); ++j) u0[j] += options.restart_spread * rng.normal();
    Eigen::VectorXd alpha_cache;
    auto objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
      LaplaceEvidence ev = laplace_evidence(data, hyper_of(u), options.prior, alpha_cache.size() ? &alpha_cache : nullptr);
      alpha_cache = ev.alpha;
      grad = -ev.grad;
      return -ev.value;
    };
    const LbfgsResult res = lbfgs_minimize(objective, u0, options.optimizer);
    if (!std::isfinite(res.value)) continue;
    ++local.restarts_succeeded;
    if (res.value < best_value) {
      best_value = res.value;
      best_u = res.x;
    }
  }

  if (best_u.size() == 0) {
    local.ok = false;
    local.warning = "all fit restarts failed; using prior-mean model";
    if (status) *status = local;
    return PreferenceGP::prior_only(base, dataset.content_id());
  }
  const KernelHyperparams h = hyper_of(best_u);
  const LaplaceEvidence ev = laplace_evidence(data, h, options.prior, nullptr, false);
  local.log_evidence = ev.value;
  if (status) *status = local;
  return PreferenceGP(h, data.points, ev.mode, dataset.content_id());
}

}  // namespace metapo
