#pragma once

// Simulated users on normalized benchmark functions, oracle selection, regret
// traces and the experiment matrix (population runs, then test runs).

#include "metapo/benchmark_constants.hpp"
#include "metapo/benchmark_functions.hpp"
#include "metapo/session.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace metapo {

class BenchmarkFunction {
 public:
  static BenchmarkFunction by_name(const std::string& name) {
    for (const auto& f : bench::raw_functions()) {
      if (f.name != name) continue;
      for (const auto& c : bench::kNormalization)
        if (name == c.name) return BenchmarkFunction(f, c.raw_min, c.raw_max);
      throw ConfigError("no normalization constants for " + name);
    }
    // isotropic_gaussian<d> for any d >= 2: the range is known in closed form
    // (peak 1 at the center, minimum at any vertex, independent of d).
    const std::string prefix = "isotropic_gaussian";
    if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() && name.size() <= prefix.size() + 3 &&
        std::all_of(name.begin() + static_cast<std::ptrdiff_t>(prefix.size()), name.end(), ::isdigit)) {
      const int d = std::stoi(name.substr(prefix.size()));
      if (d >= 2) {
        const double s = bench::isotropic_gaussian_sigma(d);
        const double mn = std::exp(-0.25 * d / (2.0 * s * s));
        return BenchmarkFunction(bench::RawFunction{name, d, &bench::isotropic_gaussian_raw}, mn, 1.0);
      }
    }
    throw ConfigError("unknown benchmark function: " + name);
  }

  static std::vector<std::string> names() {
    std::vector<std::string> out;
    for (const auto& f : bench::raw_functions()) out.push_back(f.name);
    return out;
  }

  const std::string& name() const noexcept { return fn_.name; }
  Eigen::Index dimension() const noexcept { return fn_.dimension; }
  double raw_min() const noexcept { return min_; }
  double raw_max() const noexcept { return max_; }

  double raw(const ParamVector& x) const {
    if (x.size() != dimension()) throw InvalidInput(name() + ": wrong input dimension");
    return fn_.eval(x);
  }
  /// Raw value affinely mapped so that [raw_min, raw_max] becomes [-1, 1].
  double normalized(const ParamVector& x) const { return 2.0 * (raw(x) - min_) / (max_ - min_) - 1.0; }

 private:
  BenchmarkFunction(bench::RawFunction fn, double mn, double mx) : fn_(std::move(fn)), min_(mn), max_(mx) {}
  bench::RawFunction fn_;
  double min_, max_;
};

struct SyntheticUser {
  BenchmarkFunction base;
  ParamVector shift;
  double scale = 1.0;
  std::uint64_t seed = 0;

  static SyntheticUser sample(const BenchmarkFunction& base, std::uint64_t seed, double shift_range = 0.05,
                              double scale_range = 0.1) {
    Rng rng(derive_seed(seed, 0x75736572u));
    ParamVector delta(base.dimension());
    for (Eigen::Index j = 0; j < delta.size(); ++j) delta[j] = rng.uniform(-shift_range, shift_range);
    const double s = rng.uniform(1.0 - scale_range, 1.0 + scale_range);
    return SyntheticUser{base, delta, s, seed};
  }

  static SyntheticUser identity(const BenchmarkFunction& base) {
    return SyntheticUser{base, ParamVector::Zero(base.dimension()), 1.0, 0};
  }

  /// s * f_norm(clip(x + delta)).
  double operator()(const ParamVector& x) const { return scale * base.normalized(clip_to_cube(x + shift)); }

  /// Best attainable value; the shifted optimum stays inside the cube for these functions.
  double optimum() const noexcept { return scale; }

  double regret(const ParamVector& x) const { return std::max(0.0, optimum() - (*this)(x)); }
};

/// Index of the best grid point for the user; ties go to the lowest index.
inline int oracle_select(const SyntheticUser& user, const SearchPlane& plane) {
  int best = 0;
  double best_v = user(plane.grid[0]);
  for (int i = 1; i < kGridSize; ++i) {
    const double v = user(plane.grid[static_cast<std::size_t>(i)]);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

struct RegretTrace {
  Method method = Method::random;
  int user = 0;
  std::uint64_t seed = 0;
  std::vector<double> regret;  // regret[k-1] after the k-th selection
};

struct UserRun {
  RegretTrace trace;
  SessionState state;
};

/// Runs one simulated user for `iterations` selections with the oracle choosing.
inline UserRun simulate_user(const SyntheticUser& user, const SessionConfig& config,
                             std::shared_ptr<const PopulationGallery> gallery = nullptr) {
  auto [state, plane] = start_session(config, std::move(gallery));
  UserRun run;
  run.trace.method = config.method;
  run.trace.seed = config.seed;
  for (int k = 1; k <= config.max_iterations; ++k) {
    const int idx = oracle_select(user, state.current_plane());
    submit_selection(state, idx, false);
    run.trace.regret.push_back(user.regret(state.best_so_far));
  }
  run.state = std::move(state);
  return run;
}

struct ExperimentSpec {
  std::string function = "hartmann3";
  std::vector<Method> methods = all_methods();
  int iterations = 30;
  std::vector<std::uint64_t> seeds{0};
  int population_users = 10;
  int test_users = 10;
  /// Engine settings shared by every run; method, dimension, seed and budget are filled in.
  SessionConfig session{};
};

struct ExperimentResult {
  std::string function;
  int iterations = 0;
  std::vector<RegretTrace> traces;  // ordered by (seed, method order in spec, user)
  std::size_t warnings = 0;

  std::vector<const RegretTrace*> traces_for(Method m) const {
    std::vector<const RegretTrace*> out;
    for (const auto& t : traces)
      if (t.method == m) out.push_back(&t);
    return out;
  }

  /// Mean regret per iteration over all users and seeds for a method.
  std::vector<double> mean_curve(Method m) const {
    const auto ts = traces_for(m);
    std::vector<double> out(static_cast<std::size_t>(iterations), 0.0);
    if (ts.empty()) return out;
    for (const auto* t : ts)
      for (int k = 0; k < iterations; ++k) out[static_cast<std::size_t>(k)] += t->regret[static_cast<std::size_t>(k)];
    for (auto& v : out) v /= static_cast<double>(ts.size());
    return out;
  }

  std::vector<double> sd_curve(Method m) const {
    const auto ts = traces_for(m);
    const auto mean = mean_curve(m);
    std::vector<double> out(static_cast<std::size_t>(iterations), 0.0);
    if (ts.size() < 2) return out;
    for (const auto* t : ts)
      for (int k = 0; k < iterations; ++k) {
        const double e = t->regret[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(k)] += e * e;
      }
    for (auto& v : out) v = std::sqrt(v / static_cast<double>(ts.size() - 1));
    return out;
  }

  double final_mean(Method m) const {
    const auto c = mean_curve(m);
    return c.empty() ? 0.0 : c.back();
  }
};

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline std::uint64_t method_code(Method m) {
  const auto& all = all_methods();
  return static_cast<std::uint64_t>(std::find(all.begin(), all.end(), m) - all.begin()) + 1;
}

}  // namespace detail

inline std::uint64_t population_user_seed(std::uint64_t seed, int i) { return derive_seed(seed, 0x706f70u, static_cast<std::uint64_t>(i)); }
inline std::uint64_t test_user_seed(std::uint64_t seed, int i) { return derive_seed(seed, 0x74657374u, static_cast<std::uint64_t>(i)); }

inline std::string fmt_population_label(const BenchmarkFunction& fn, Method m, std::uint64_t seed, int i) {
  return "population " + fn.name() + " " + to_string(m) + " seed " + std::to_string(seed) + " user " + std::to_string(i);
}

/// Population gallery for one seed: each population user runs the given
/// no-transfer method and contributes its final model.
inline std::shared_ptr<PopulationGallery> build_population(const BenchmarkFunction& fn, Method population_method,
                                                           const ExperimentSpec& spec, std::uint64_t seed,
                                                           const ProgressFn& progress = {},
                                                           std::vector<UserRun>* runs = nullptr) {
  if (is_meta(population_method) || population_method == Method::random)
    throw ConfigError("population runs need a no-transfer method");
  auto gallery = std::make_shared<PopulationGallery>();
  for (int i = 0; i < spec.population_users; ++i) {
    const SyntheticUser user = SyntheticUser::sample(fn, population_user_seed(seed, i));
    SessionConfig cfg = spec.session;
    cfg.dimension = fn.dimension();
    cfg.method = population_method;
    cfg.gallery_ref.reset();
    cfg.max_iterations = spec.iterations;
    cfg.seed = derive_seed(seed, 100 + detail::method_code(population_method), static_cast<std::uint64_t>(i));
    UserRun run = simulate_user(user, cfg);
    if (!run.state.current_model) throw InvalidState("population run produced no model");
    gallery->add(run.state.current_model, fn.name() + "/" + to_string(population_method) + "/user" + std::to_string(i));
    if (progress) progress(fmt_population_label(fn, population_method, seed, i));
    if (runs) runs->push_back(std::move(run));
  }
  return gallery;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {}) {
  const BenchmarkFunction fn = BenchmarkFunction::by_name(spec.function);
  if (spec.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (spec.methods.empty()) throw ConfigError("no methods requested");
  ExperimentResult res;
  res.function = fn.name();
  res.iterations = spec.iterations;
  for (std::uint64_t seed : spec.seeds) {
    std::map<Method, std::shared_ptr<const PopulationGallery>> galleries;
    for (Method m : spec.methods) {
      if (!is_meta(m)) continue;
      const Method pm = population_method_for(m);
      if (!galleries.count(pm)) galleries[pm] = build_population(fn, pm, spec, seed, progress);
    }
    for (Method m : spec.methods) {
      for (int u = 0; u < spec.test_users; ++u) {
        const SyntheticUser user = SyntheticUser::sample(fn, test_user_seed(seed, u));
        SessionConfig cfg = spec.session;
        cfg.dimension = fn.dimension();
        cfg.method = m;
        cfg.max_iterations = spec.iterations;
        cfg.seed = derive_seed(seed, detail::method_code(m), static_cast<std::uint64_t>(u));
        std::shared_ptr<const PopulationGallery> g;
        if (is_meta(m)) {
          g = galleries.at(population_method_for(m));
          cfg.gallery_ref = to_string(population_method_for(m)) + "-seed" + std::to_string(seed);
        } else {
          cfg.gallery_ref.reset();
        }
        UserRun run = simulate_user(user, cfg, g);
        run.trace.user = u;
        run.trace.seed = seed;
        res.warnings += run.state.warnings.size();
        res.traces.push_back(std::move(run.trace));
        if (progress)
          progress(fn.name() + " " + to_string(m) + " seed " + std::to_string(seed) + " user " + std::to_string(u) +
                   " final regret " + std::to_string(res.traces.back().regret.back()));
      }
    }
  }
  return res;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// `iter,regret` CSV for one trace.
inline std::string trace_csv(const RegretTrace& t) {
  std::string s = "iter,regret\n";
  for (std::size_t k = 0; k < t.regret.size(); ++k) s += std::to_string(k + 1) + "," + format_double(t.regret[k]) + "\n";
  return s;
}

inline std::string trace_file_name(const std::string& function, const RegretTrace& t) {
  return function + "_" + to_string(t.method) + "_seed" + std::to_string(t.seed) + "_user" + std::to_string(t.user) + ".csv";
}

/// Per-method, per-iteration mean and standard deviation of regret.
inline std::string summary_csv(const ExperimentResult& r, const std::vector<Method>& methods) {
  std::string s = "method,iter,mean_regret,sd_regret,runs\n";
  for (Method m : methods) {
    const auto mean = r.mean_curve(m);
    const auto sd = r.sd_curve(m);
    const auto n = r.traces_for(m).size();
    for (int k = 0; k < r.iterations; ++k)
      s += to_string(m) + "," + std::to_string(k + 1) + "," + format_double(mean[static_cast<std::size_t>(k)]) + "," +
           format_double(sd[static_cast<std::size_t>(k)]) + "," + std::to_string(n) + "\n";
  }
  return s;
}

/// One row per method with the final-iteration regret.
inline std::string final_summary_csv(const ExperimentResult& r, const std::vector<Method>& methods) {
  std::string s = "method,final_mean_regret,final_sd_regret,runs\n";
  for (Method m : methods) {
    const auto sd = r.sd_curve(m);
    s += to_string(m) + "," + format_double(r.final_mean(m)) + "," + format_double(sd.empty() ? 0.0 : sd.back()) + "," +
         std::to_string(r.traces_for(m).size()) + "\n";
  }
  return s;
}

/// First iteration (1-based) whose value is below the threshold, or 0 if never.
inline int first_below(const std::vector<double>& curve, double threshold) {
  for (std::size_t k = 0; k < curve.size(); ++k)
    if (curve[k] < threshold) return static_cast<int>(k + 1);
  return 0;
}

}  // namespace metapo
