#pragma once

// Limited-memory BFGS minimizer with a strong-Wolfe line search.

#include "metapo/core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace metapo {

struct LbfgsOptions {
  int max_iterations = 200;
  double gtol = 1e-5;  // on the infinity norm of the gradient
  int memory = 10;
  int max_linesearch = 30;
  double c1 = 1e-4;
  double c2 = 0.9;
  /// Stop when the relative decrease stays below this for 3 consecutive steps.
  double ftol = 1e-13;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

namespace detail {

// Evaluation that maps numerical failures to +inf.
template <class F>
double safe_eval(F& f, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  try {
    const double v = f(x, g);
    if (!std::isfinite(v) || !g.allFinite()) return std::numeric_limits<double>::infinity();
    return v;
  } catch (const NumericalFailure&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline double interpolate_step(double a_lo, double f_lo, double d_lo, double a_hi, double f_hi) {
  // Minimizer of the quadratic through (a_lo, f_lo, d_lo) and (a_hi, f_hi), safeguarded.
  const double span = a_hi - a_lo;
  double t = 0.5;
  if (std::isfinite(f_hi)) {
    const double denom = 2.0 * (f_hi - f_lo - d_lo * span);
    if (denom > 0.0) t = -d_lo * span * span / denom / span;
  }
  t = std::clamp(t, 0.1, 0.9);
  return a_lo + t * span;
}

}  // namespace detail

/// Minimizes f, where f(x, grad) returns the value and writes the gradient.
/// NumericalFailure thrown by f is treated as an infinite value.
template <class F>
LbfgsResult lbfgs_minimize(F&& f, Eigen::VectorXd x0, const LbfgsOptions& opt = {}) {
  LbfgsResult res;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd g(n), g_new(n), x_new(n);
  res.x = std::move(x0);
  res.value = detail::safe_eval(f, res.x, g);
  ++res.evaluations;
  if (!std::isfinite(res.value)) {
    res.line_search_failed = true;
    return res;
  }
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  int stall = 0;
  std::vector<double> alpha_buf;

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.gtol) {
      res.converged = true;
      return res;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    const std::size_t m = s_hist.size();
    alpha_buf.assign(m, 0.0);
    for (std::size_t i = m; i-- > 0;) {
      alpha_buf[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha_buf[i] * y_hist[i];
    }
    if (m > 0) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha_buf[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    double d0 = g.dot(dir);
    if (!(d0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      d0 = -g.squaredNorm();
    }
    double step = (m == 0) ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;

    // Strong-Wolfe search: bracket then zoom.
    const double f0 = res.value;
    double a_prev = 0.0, f_prev = f0, d_prev = d0;
    double a_lo = 0.0, f_lo = f0, d_lo = d0, a_hi = 0.0, f_hi = 0.0;
    bool zooming = false, found = false;
    double f_new = 0.0;
    double armijo_best_a = 0.0, armijo_best_f = f0;
    Eigen::VectorXd armijo_best_g;
    for (int ls = 0; ls < opt.max_linesearch; ++ls) {
      if (zooming) step = detail::interpolate_step(a_lo, f_lo, d_lo, a_hi, f_hi);
      x_new = res.x + step * dir;
      f_new = detail::safe_eval(f, x_new, g_new);
      ++res.evaluations;
      const double d_new = std::isfinite(f_new) ? g_new.dot(dir) : 0.0;
      const bool armijo = std::isfinite(f_new) && f_new <= f0 + opt.c1 * step * d0;
      if (armijo && f_new < armijo_best_f) {
        armijo_best_a = step;
        armijo_best_f = f_new;
        armijo_best_g = g_new;
      }
      if (!zooming) {
        if (!armijo || (ls > 0 && f_new >= f_prev)) {
          a_lo = a_prev; f_lo = f_prev; d_lo = d_prev;
          a_hi = step; f_hi = f_new;
          zooming = true;
          continue;
        }
        if (std::abs(d_new) <= -opt.c2 * d0) { found = true; break; }
        if (d_new >= 0.0) {
          a_lo = step; f_lo = f_new; d_lo = d_new;
          a_hi = a_prev; f_hi = f_prev;
          zooming = true;
          continue;
        }
        a_prev = step; f_prev = f_new; d_prev = d_new;
        step *= 2.0;
      } else {
        if (!armijo || f_new >= f_lo) {
          a_hi = step; f_hi = f_new;
        } else {
          if (std::abs(d_new) <= -opt.c2 * d0) { found = true; break; }
          if (d_new * (a_hi - a_lo) >= 0.0) { a_hi = a_lo; f_hi = f_lo; }
          a_lo = step; f_lo = f_new; d_lo = d_new;
        }
        if (std::abs(a_hi - a_lo) < 1e-16 * std::max(1.0, std::abs(a_lo))) break;
      }
    }
    if (!found) {
      if (armijo_best_a <= 0.0) {
        res.line_search_failed = true;
        return res;
      }
      step = armijo_best_a;
      x_new = res.x + step * dir;
      f_new = armijo_best_f;
      g_new = armijo_best_g;
    }
    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double rel = (f0 - f_new) / std::max({std::abs(f0), std::abs(f_new), 1.0});
    res.x = x_new;
    res.value = f_new;
    g = g_new;
    stall = (rel < opt.ftol) ? stall + 1 : 0;
    if (stall >= 3) {
      res.converged = true;
      ++res.iterations;
      return res;
    }
  }
  res.converged = g.lpNorm<Eigen::Infinity>() <= opt.gtol;
  return res;
}

}  // namespace metapo
