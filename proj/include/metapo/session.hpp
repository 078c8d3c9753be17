#pragma once

// The optimization loop for one user: present a plane, record the choice,
// refit, build the next plane. Covers population-modeling runs (no transfer)
// and deployment runs on a population gallery.

#include "metapo/plane.hpp"

#include <optional>
#include <string>
#include <vector>

namespace metapo {

enum class Method { random, no_transfer_o, no_transfer_t, meta_po_m_o, meta_po_r_o, meta_po_m_t, meta_po_r_t };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::random,      Method::no_transfer_o, Method::no_transfer_t,
                                     Method::meta_po_m_o, Method::meta_po_r_o,   Method::meta_po_m_t,
                                     Method::meta_po_r_t};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::random: return "random";
    case Method::no_transfer_o: return "no_transfer_o";
    case Method::no_transfer_t: return "no_transfer_t";
    case Method::meta_po_m_o: return "meta_po_m_o";
    case Method::meta_po_r_o: return "meta_po_r_o";
    case Method::meta_po_m_t: return "meta_po_m_t";
    case Method::meta_po_r_t: return "meta_po_r_t";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method: " + s);
}

inline bool is_meta(Method m) {
  return m == Method::meta_po_m_o || m == Method::meta_po_r_o || m == Method::meta_po_m_t || m == Method::meta_po_r_t;
}
inline bool uses_two_step(Method m) {
  return m == Method::no_transfer_t || m == Method::meta_po_m_t || m == Method::meta_po_r_t;
}
inline AcquisitionVariant variant_of(Method m) {
  if (m == Method::meta_po_m_o || m == Method::meta_po_m_t) return AcquisitionVariant::taf_m;
  if (m == Method::meta_po_r_o || m == Method::meta_po_r_t) return AcquisitionVariant::taf_r;
  return AcquisitionVariant::ei;
}
/// Plane-construction tag shared by population models and the methods deployed on them.
inline std::string plane_strategy(Method m) {
  if (m == Method::random) return "random";
  return uses_two_step(m) ? "two_step" : "orthogonal";
}
/// No-transfer method whose runs build populations for `m`.
inline Method population_method_for(Method m) {
  return uses_two_step(m) ? Method::no_transfer_t : Method::no_transfer_o;
}

/// Which plane points enter a selection event as rejected.
enum class RejectedSet { grid, vertices };

inline std::string to_string(RejectedSet r) { return r == RejectedSet::grid ? "grid" : "vertices"; }
inline RejectedSet rejected_set_from_string(const std::string& s) {
  if (s == "grid") return RejectedSet::grid;
  if (s == "vertices") return RejectedSet::vertices;
  throw ConfigError("unknown rejected set: " + s);
}

struct SessionConfig {
  Eigen::Index dimension = 2;
  Method method = Method::no_transfer_t;
  int max_iterations = 15;
  DecaySchedule decay{};
  std::uint64_t seed = 0;
  std::optional<std::string> gallery_ref;

  MaximizerOptions maximizer{};
  FitOptions fit{};
  /// Restarts for refits after the first; the first fit always uses fit.restarts.
  int refit_restarts = 3;
  bool warm_start = true;
  TwoStepMode two_step_mode = TwoStepMode::augment;
  int mc_samples = 10;
  RejectedSet rejected = RejectedSet::grid;

  void validate() const {
    if (dimension < 2) throw ConfigError("dimension must be >= 2");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (maximizer.starts < 1 || maximizer.iters < 0) throw ConfigError("maximizer.starts must be >= 1");
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (decay.d1 < 0 || !(decay.d2 > 0.0)) throw ConfigError("decay requires d1 >= 0 and d2 > 0");
    if (is_meta(method) && !gallery_ref) throw ConfigError(to_string(method) + " requires gallery_ref");
    if (!is_meta(method) && gallery_ref) throw ConfigError(to_string(method) + " does not take a gallery");
  }
};

enum class SessionStatus { awaiting_selection, satisfied, exhausted };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::awaiting_selection: return "awaiting_selection";
    case SessionStatus::satisfied: return "satisfied";
    case SessionStatus::exhausted: return "exhausted";
  }
  return "?";
}

inline SessionStatus session_status_from_string(const std::string& s) {
  if (s == "awaiting_selection") return SessionStatus::awaiting_selection;
  if (s == "satisfied") return SessionStatus::satisfied;
  if (s == "exhausted") return SessionStatus::exhausted;
  throw InvalidInput("unknown session status: " + s);
}

struct SessionState {
  SessionConfig config;
  std::shared_ptr<const PopulationGallery> gallery;
  PreferenceDataset dataset;
  std::shared_ptr<const PreferenceGP> current_model;
  std::vector<SearchPlane> plane_history;
  /// Grid index chosen on each plane, parallel to dataset events.
  std::vector<int> selections;
  /// Per selection: the following plane was built with kDegradedMaximizer.
  std::vector<bool> degraded;
  ParamVector best_so_far;
  int iteration = 1;  // index of the plane currently shown
  SessionStatus status = SessionStatus::awaiting_selection;
  std::optional<int> least_iteration;
  Eigen::VectorXd last_weights;
  std::vector<std::string> warnings;
  std::size_t gallery_consultations = 0;

  const SearchPlane& current_plane() const {
    if (plane_history.empty()) throw InvalidState("session has no plane");
    return plane_history.back();
  }
  bool terminated() const noexcept { return status != SessionStatus::awaiting_selection; }
};

namespace detail {

enum class SeedPurpose : std::uint64_t { random_plane = 1, c1, c2, fit, two_step, probes, repair };

inline std::uint64_t iteration_seed(const SessionConfig& c, int k, SeedPurpose p, std::uint64_t extra = 0) {
  return derive_seed(c.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(p), extra);
}

inline std::vector<ParamVector> rejected_points(const SearchPlane& plane, int chosen, RejectedSet mode) {
  const ParamVector& x = plane.grid[static_cast<std::size_t>(chosen)];
  std::vector<ParamVector> out;
  const auto push = [&](const ParamVector& p) {
    if (exactly_equal(p, x)) return;
    for (const auto& q : out)
      if (exactly_equal(q, p)) return;
    out.push_back(p);
  };
  if (mode == RejectedSet::grid) {
    for (int i = 0; i < kGridSize; ++i)
      if (i != chosen) push(plane.grid[static_cast<std::size_t>(i)]);
  } else {
    for (int cell : SearchPlane::kVertexCells)
      if (cell != chosen) push(plane.grid[static_cast<std::size_t>(cell)]);
  }
  return out;
}

/// Points of the shown plane that the next two-step augmentation ranks x1 against.
inline std::vector<ParamVector> comparison_points(const SearchPlane& plane, RejectedSet mode) {
  std::vector<ParamVector> out;
  if (mode == RejectedSet::grid) return plane.grid;
  for (int cell : SearchPlane::kVertexCells) out.push_back(plane.grid[static_cast<std::size_t>(cell)]);
  return out;
}

}  // namespace detail

/// Cheaper maximizer settings for interactive calls that run long.
inline const MaximizerOptions kDegradedMaximizer{40, 50, 0.1, 1e-6};

/// Builds the plane for iteration `k_next` around `center`, using the
/// acquisition a_k with k = number of selections so far.
inline SearchPlane compute_next_plane(SessionState& st, const ParamVector& center, int k_next, bool degraded = false) {
  SessionConfig cfg = st.config;
  if (degraded) cfg.maximizer = kDegradedMaximizer;
  const Eigen::Index d = cfg.dimension;
  const int k = k_next - 1;  // selections made so far
  using detail::SeedPurpose;

  if (cfg.method == Method::random) {
    Rng rng(detail::iteration_seed(cfg, k_next, SeedPurpose::random_plane));
    for (;;) {
      ParamVector a = rng.uniform_point(d), b = rng.uniform_point(d);
      if (!plane_is_degenerate(center, a, b)) return build_plane(center, a, b);
    }
  }

  const bool meta = is_meta(cfg.method);
  AcquisitionContext ctx;
  ctx.schedule = cfg.decay;
  ctx.best_observed = center;
  ctx.current_model = st.current_model;
  ctx.iteration = std::max(1, k);
  if (meta) {
    ctx.gallery = st.gallery;
    ++st.gallery_consultations;
    if (st.current_model) {
      const double dk = decay(cfg.decay, ctx.iteration);
      if (dk > 0.0) {
        const AcquisitionVariant var = variant_of(cfg.method);
        if (var == AcquisitionVariant::taf_r) {
          ctx.weights = taf_r_weights(*st.gallery, *st.current_model, st.dataset);
        } else {
          std::vector<ParamVector> probes;
          if (!st.plane_history.empty()) {
            probes = st.plane_history.back().grid;
          } else {
            Rng prng(detail::iteration_seed(cfg, k_next, SeedPurpose::probes));
            for (int i = 0; i < kGridSize; ++i) probes.push_back(prng.uniform_point(d));
          }
          ctx.weights = taf_m_weights(*st.gallery, probes);
        }
      } else {
        ctx.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(st.gallery->size()));
      }
      st.last_weights = ctx.weights;
    } else {
      st.last_weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(st.gallery->size()));
    }
  } else {
    ctx.ei_only = true;
  }

  auto acq = std::make_shared<TafAcquisition>(ctx);
  const BatchObjective objective = [acq](const PointMatrix& X) { return (*acq)(X); };
  ParamVector c1 = maximize_acquisition(objective, d, detail::iteration_seed(cfg, k_next, SeedPurpose::c1),
                                        cfg.maximizer, {center})
                       .x;
  if ((c1 - center).squaredNorm() < 1e-18) {
    st.warnings.push_back("iteration " + std::to_string(k_next) + ": c1 at center, drawn at random");
    Rng rng(detail::iteration_seed(cfg, k_next, SeedPurpose::repair));
    c1 = rng.uniform_point(d);
  }

  ParamVector c2;
  BatchObjective second = objective;
  if (uses_two_step(cfg.method)) {
    std::vector<ParamVector> previous;
    if (!st.plane_history.empty()) previous = detail::comparison_points(st.plane_history.back(), cfg.rejected);
    TwoStepOptions two;
    two.mode = cfg.two_step_mode;
    two.mc_samples = cfg.mc_samples;
    two.variant = variant_of(cfg.method);
    two.fit = cfg.fit;
    two.fit.restarts = cfg.refit_restarts;
    if (!st.current_model) previous.clear();
    const TwoStepResult ts =
        two_step_acquisition(ctx, st.dataset, c1, previous, detail::iteration_seed(cfg, k_next, SeedPurpose::two_step), two);
    if (!ts.warning.empty()) st.warnings.push_back("iteration " + std::to_string(k_next) + ": " + ts.warning);
    second = ts.objective;
    c2 = maximize_acquisition(second, d, detail::iteration_seed(cfg, k_next, SeedPurpose::c2), cfg.maximizer, {center}).x;
    for (std::uint64_t retry = 1; retry <= 3 && plane_is_degenerate(center, c1, c2); ++retry)
      c2 = maximize_acquisition(second, d, detail::iteration_seed(cfg, k_next, SeedPurpose::c2, retry), cfg.maximizer).x;
  }
  if (c2.size() == 0 || plane_is_degenerate(center, c1, c2))
    c2 = orthogonal_third_point(center, c1, second, detail::iteration_seed(cfg, k_next, SeedPurpose::c2, 7), cfg.maximizer);
  if (plane_is_degenerate(center, c1, c2)) {
    Rng rng(detail::iteration_seed(cfg, k_next, SeedPurpose::repair, 1));
    do c2 = rng.uniform_point(d);
    while (plane_is_degenerate(center, c1, c2));
  }
  return build_plane(center, c1, c2);
}

/// First plane. No-transfer and random: three random points. Meta methods:
/// random center, c1 from the population acquisition alone.
inline std::pair<SessionState, SearchPlane> start_session(const SessionConfig& config,
                                                          std::shared_ptr<const PopulationGallery> gallery = nullptr) {
  config.validate();
  SessionState st;
  st.config = config;
  st.dataset = PreferenceDataset(config.dimension);
  if (is_meta(config.method)) {
    if (!gallery || gallery->empty()) throw ConfigError("population gallery is missing or empty");
    if (gallery->dimension() != config.dimension) throw ConfigError("gallery dimension does not match session");
    st.gallery = std::move(gallery);
  }
  SearchPlane plane;
  if (is_meta(config.method)) {
    Rng rng(detail::iteration_seed(config, 1, detail::SeedPurpose::random_plane));
    const ParamVector center = rng.uniform_point(config.dimension);
    plane = compute_next_plane(st, center, 1);
  } else {
    plane = random_plane(config.dimension, detail::iteration_seed(config, 1, detail::SeedPurpose::random_plane));
  }
  st.best_so_far = plane.center;
  st.iteration = 1;
  st.plane_history.push_back(plane);
  return {std::move(st), std::move(plane)};
}

/// Records the choice on the current plane and, unless the session ends,
/// returns the next plane.
inline std::optional<SearchPlane> submit_selection(SessionState& st, int chosen_grid_index, bool satisfied,
                                                   bool degraded = false) {
  if (st.terminated()) throw InvalidState("session already terminated (" + to_string(st.status) + ")");
  if (chosen_grid_index < 0 || chosen_grid_index >= kGridSize) throw InvalidInput("grid index must be in 0..24");
  const SessionConfig& cfg = st.config;
  const SearchPlane& plane = st.current_plane();
  const int k = st.iteration;

  SelectionEvent ev;
  ev.chosen = plane.grid[static_cast<std::size_t>(chosen_grid_index)];
  ev.rejected = detail::rejected_points(plane, chosen_grid_index, cfg.rejected);
  ev.iteration_index = k;
  if (ev.rejected.empty()) throw InvalidState("plane has no distinct alternatives to the chosen point");
  const ParamVector chosen = ev.chosen;
  st.dataset.append(std::move(ev));
  st.selections.push_back(chosen_grid_index);
  st.degraded.push_back(degraded);
  st.best_so_far = chosen;

  if (cfg.method != Method::random) {
    FitOptions fo = cfg.fit;
    if (st.current_model) fo.restarts = cfg.refit_restarts;
    FitStatus fs;
    const PreferenceGP* warm = (cfg.warm_start && st.current_model) ? st.current_model.get() : nullptr;
    st.current_model = std::make_shared<const PreferenceGP>(
        fit_preference_gp(st.dataset, detail::iteration_seed(cfg, k, detail::SeedPurpose::fit), fo, warm, &fs));
    if (!fs.ok) st.warnings.push_back("iteration " + std::to_string(k) + ": " + fs.warning);
  }

  if (satisfied) {
    st.status = SessionStatus::satisfied;
    st.least_iteration = k;
    return std::nullopt;
  }
  if (k >= cfg.max_iterations) {
    st.status = SessionStatus::exhausted;
    return std::nullopt;
  }
  SearchPlane next = compute_next_plane(st, chosen, k + 1, degraded);
  st.plane_history.push_back(next);
  st.iteration = k + 1;
  return next;
}

}  // namespace metapo
