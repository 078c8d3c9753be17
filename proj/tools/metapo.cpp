// metapo: experiments, population galleries, the HTTP service, and record tools.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime failure.

#include "metapo/plot.hpp"
#include "metapo/service.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace metapo;

namespace {

struct FlagError : ConfigError {
  FlagError(const std::string& flag, const std::string& what) : ConfigError(flag + ": " + what) {}
};

std::vector<Method> parse_methods(const std::string& csv) {
  if (csv == "all") return all_methods();
  std::vector<Method> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(method_from_string(item));
    } catch (const ConfigError& e) {
      throw FlagError("--methods", e.what());
    }
  }
  if (out.empty()) throw FlagError("--methods", "no methods given");
  return out;
}

struct EngineFlags {
  int starts = 80;
  int iters = 100;
  std::string rejected = "vertices";
  int fit_restarts = 3;
  int refit_restarts = 1;
  std::string two_step = "augment";
  int mc_samples = 10;
  int d1 = 5;
  double d2 = 0.1;

  void add(CLI::App* app) {
    app->add_option("--starts", starts, "maximizer starts")->capture_default_str();
    app->add_option("--maximizer-iters", iters, "pattern-search iterations per start")->capture_default_str();
    app->add_option("--rejected", rejected, "rejected set per selection: grid | vertices")->capture_default_str();
    app->add_option("--fit-restarts", fit_restarts, "hyperparameter restarts for the first fit")->capture_default_str();
    app->add_option("--refit-restarts", refit_restarts, "hyperparameter restarts for later refits")->capture_default_str();
    app->add_option("--two-step", two_step, "two-step mode: augment | mc")->capture_default_str();
    app->add_option("--mc-samples", mc_samples, "samples for --two-step mc")->capture_default_str();
    app->add_option("--d1", d1, "decay plateau length")->capture_default_str();
    app->add_option("--d2", d2, "decay slope")->capture_default_str();
  }

  SessionConfig config() const {
    SessionConfig c;
    c.maximizer.starts = starts;
    c.maximizer.iters = iters;
    try {
      c.rejected = rejected_set_from_string(rejected);
    } catch (const ConfigError& e) {
      throw FlagError("--rejected", e.what());
    }
    if (two_step != "augment" && two_step != "mc") throw FlagError("--two-step", "expected augment or mc");
    c.two_step_mode = two_step == "mc" ? TwoStepMode::mc : TwoStepMode::augment;
    c.mc_samples = mc_samples;
    c.fit.restarts = fit_restarts;
    c.refit_restarts = refit_restarts;
    c.decay.d1 = d1;
    c.decay.d2 = d2;
    if (starts < 1) throw FlagError("--starts", "must be >= 1");
    if (iters < 0) throw FlagError("--maximizer-iters", "must be >= 0");
    if (fit_restarts < 1 || refit_restarts < 1) throw FlagError("--fit-restarts", "restarts must be >= 1");
    return c;
  }
};

BenchmarkFunction function_flag(const std::string& name) {
  try {
    return BenchmarkFunction::by_name(name);
  } catch (const ConfigError& e) {
    throw FlagError("--function", e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write", path.string());
  f << text;
  if (!f) throw IoError("write failed", path.string());
}

int run_simulate(const std::string& function, const std::string& methods_csv, int iters, int seeds, std::uint64_t seed,
                 const std::string& out, int users, int population_users, bool plot, bool quiet,
                 const EngineFlags& flags) {
  ExperimentSpec spec;
  spec.function = function_flag(function).name();
  spec.methods = parse_methods(methods_csv);
  if (iters < 1) throw FlagError("--iters", "must be >= 1");
  if (seeds < 1) throw FlagError("--seeds", "must be >= 1");
  if (users < 1) throw FlagError("--users", "must be >= 1");
  if (population_users < 1) throw FlagError("--population-users", "must be >= 1");
  spec.iterations = iters;
  spec.seeds.clear();
  for (int s = 0; s < seeds; ++s) spec.seeds.push_back(seed + static_cast<std::uint64_t>(s));
  spec.test_users = users;
  spec.population_users = population_users;
  spec.session = flags.config();

  const fs::path dir(out);
  fs::create_directories(dir / "traces");
  const ExperimentResult r = run_experiment(spec, [quiet](const std::string& msg) {
    if (!quiet) std::fprintf(stderr, "%s\n", msg.c_str());
  });
  for (const auto& t : r.traces) write_text(dir / "traces" / trace_file_name(r.function, t), trace_csv(t));
  write_text(dir / "summary.csv", summary_csv(r, spec.methods));
  write_text(dir / "final.csv", final_summary_csv(r, spec.methods));
  if (plot) write_text(dir / "regret.svg", regret_svg(r, spec.methods));
  std::printf("%s", final_summary_csv(r, spec.methods).c_str());
  if (r.warnings) std::fprintf(stderr, "%zu engine warnings\n", r.warnings);
  return 0;
}

int run_populate(const std::string& function, const std::string& method_name, int users, int iters, std::uint64_t seed,
                 const std::string& out, std::string theme, const std::string& created_at, bool quiet,
                 const EngineFlags& flags) {
  const BenchmarkFunction fn = function_flag(function);
  Method m;
  try {
    m = method_from_string(method_name);
  } catch (const ConfigError& e) {
    throw FlagError("--method", e.what());
  }
  if (is_meta(m) || m == Method::random) throw FlagError("--method", "population runs need no_transfer_o or no_transfer_t");
  if (users < 1) throw FlagError("--users", "must be >= 1");
  if (iters < 1) throw FlagError("--iters", "must be >= 1");
  if (theme.empty()) theme = fn.name();
  ExperimentSpec spec;
  spec.function = fn.name();
  spec.iterations = iters;
  spec.population_users = users;
  spec.session = flags.config();
  std::vector<UserRun> runs;
  build_population(fn, m, spec, seed, [quiet](const std::string& msg) {
    if (!quiet) std::fprintf(stderr, "%s\n", msg.c_str());
  }, &runs);
  for (const auto& run : runs) {
    const SessionRecord rec = export_session(run.state, theme, created_at);
    std::printf("%s\n", save_model(rec, out, created_at).c_str());
  }
  return 0;
}

int run_serve(int port, const std::string& host, const std::string& gallery_dir, const std::string& images_dir,
              const std::string& config, std::uint64_t seed) {
  ServiceOptions opt;
  opt.gallery_dir = gallery_dir;
  opt.images_dir = images_dir;
  opt.defaults.seed = seed;
  if (!config.empty()) opt.load_config_file(config);
  SessionService service(opt);
  const auto listing = nlohmann::json::parse(service.images().body);
  if (listing["images"].empty()) service.add_image("demo", demo_image());
  httplib::Server server;
  service.mount(server);
  std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), port);
  if (!server.listen(host, port)) throw IoError("cannot listen on port " + std::to_string(port), host);
  return 0;
}

int run_inspect(const std::string& model_path, const std::string& session_path, std::uint64_t seed) {
  const StoredModel m = load_model(model_path);
  const auto& h = m.model.hyperparams();
  std::printf("id: %s\ntheme: %s\nmethod: %s\nplane_strategy: %s\ndimension: %lld\ncreated_at: %s\n", m.id.c_str(),
              m.theme.c_str(), m.method.c_str(), m.plane_strategy.c_str(), static_cast<long long>(m.dimension),
              m.created_at.c_str());
  std::printf("observed_points: %lld\nsource_events: %zu\nsignal_variance: %.17g\nlength_scales:",
              static_cast<long long>(m.model.num_points()), m.source.size(), h.signal_variance);
  for (Eigen::Index j = 0; j < h.length_scales.size(); ++j) std::printf(" %.6g", h.length_scales[j]);
  std::printf("\n");

  PopulationGallery g;
  g.add(std::make_shared<const PreferenceGP>(m.model), m.theme);
  PreferenceDataset data = m.source;
  PreferenceGP current = m.model;
  if (!session_path.empty()) {
    const SessionRecord rec = parse_session_record(detail::read_file(session_path), session_path);
    if (rec.config.dimension != m.dimension) throw FlagError("--session", "dimension differs from the model");
    data = dataset_of(rec);
    if (rec.model) current = *rec.model;
    else if (!data.empty()) current = fit_preference_gp(data, seed);
  }
  const Eigen::VectorXd w = taf_r_weights(g, current, data);
  std::printf("taf_r_weight: %.17g\n", w[0]);
  return 0;
}

int run_replay(const std::string& record_path, const std::string& gallery_dir, const std::string& out) {
  const SessionRecord rec = parse_session_record(detail::read_file(record_path), record_path);
  std::shared_ptr<const PopulationGallery> gallery;
  if (is_meta(rec.config.method)) {
    if (gallery_dir.empty()) throw FlagError("--gallery-dir", "required to replay " + to_string(rec.config.method));
    const LoadedGallery all = load_gallery(gallery_dir, rec.config.dimension);
    gallery = select_gallery(all, rec.config.gallery_ref.value_or("")).gallery;
  }
  const SessionState st = replay_session(rec, gallery);
  const SessionRecord again = export_session(st, rec.theme, rec.created_at);
  if (!out.empty()) write_text(out, to_json(again));
  if (!same_planes(st.plane_history, rec.planes) || st.status != rec.status) {
    std::size_t k = 0;
    while (k < std::min(st.plane_history.size(), rec.planes.size()) &&
           same_planes({st.plane_history[k]}, {rec.planes[k]}))
      ++k;
    std::printf("replay diverged at plane %zu\n", k + 1);
    return 3;
  }
  std::printf("replay identical: %zu planes, %zu selections, status %s\n", st.plane_history.size(),
              st.selections.size(), to_string(st.status).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based optimization with population priors"};
  app.require_subcommand(1);

  EngineFlags sim_flags, pop_flags;
  std::string function, methods = "all", out, theme, created_at, method = "no_transfer_t";
  int iters = 30, seeds = 1, users = 10, population_users = 10;
  std::uint64_t seed = 0;
  bool plot = false, quiet = false;

  auto* sim = app.add_subcommand("simulate", "run the benchmark experiment matrix");
  sim->add_option("--function", function, "benchmark: " + fmt::format("{}", fmt::join(BenchmarkFunction::names(), ", ")))
      ->required();
  sim->add_option("--methods", methods, "comma-separated methods or 'all'")->capture_default_str();
  sim->add_option("--iters", iters, "selections per run")->capture_default_str();
  sim->add_option("--seeds", seeds, "number of experiment seeds (seed, seed+1, ...)")->capture_default_str();
  sim->add_option("--seed", seed, "first experiment seed")->capture_default_str();
  sim->add_option("--users", users, "test users per seed")->capture_default_str();
  sim->add_option("--population-users", population_users, "population users per seed")->capture_default_str();
  sim->add_option("--out", out, "output directory")->required();
  sim->add_flag("--plot", plot, "also write regret.svg");
  sim->add_flag("--quiet", quiet, "no progress lines");
  sim_flags.add(sim);

  std::string pop_function;
  int pop_users = 10, pop_iters = 30;
  std::uint64_t pop_seed = 0;
  std::string pop_out;
  bool pop_quiet = false;
  auto* pop = app.add_subcommand("populate", "build a population gallery from simulated no-transfer runs");
  pop->add_option("--function", pop_function, "benchmark function")->required();
  pop->add_option("--method", method, "no_transfer_t | no_transfer_o")->capture_default_str();
  pop->add_option("--users", pop_users, "population users")->capture_default_str();
  pop->add_option("--iters", pop_iters, "selections per run")->capture_default_str();
  pop->add_option("--seed", pop_seed, "population seed")->capture_default_str();
  pop->add_option("--out", pop_out, "gallery directory")->required();
  pop->add_option("--theme", theme, "theme label (default: function name)");
  pop->add_option("--created-at", created_at, "fixed created_at timestamp (default: now)");
  pop->add_flag("--quiet", pop_quiet, "no progress lines");
  pop_flags.add(pop);

  int port = 8080;
  std::string host = "127.0.0.1", gallery_dir, images_dir, config;
  std::uint64_t serve_seed = 0;
  auto* serve = app.add_subcommand("serve", "start the HTTP service");
  serve->add_option("--port", port, "TCP port")->capture_default_str();
  serve->add_option("--host", host, "bind address")->capture_default_str();
  serve->add_option("--gallery-dir", gallery_dir, "population gallery directory");
  serve->add_option("--images-dir", images_dir, "directory of PNG images (ids are file stems)");
  serve->add_option("--config", config, "JSON file with session defaults");
  serve->add_option("--seed", serve_seed, "seed for sessions whose request omits one")->capture_default_str();

  std::string model_path, session_path;
  std::uint64_t inspect_seed = 0;
  auto* inspect = app.add_subcommand("inspect", "print a stored model and its TAF-R weight against a session");
  inspect->add_option("--model", model_path, "stored model file")->required();
  inspect->add_option("--session", session_path, "exported session record (default: the model's own data)");
  inspect->add_option("--seed", inspect_seed, "seed for fitting a session that has no model")->capture_default_str();

  std::string record_path, replay_gallery, replay_out;
  auto* replay = app.add_subcommand("replay", "re-run an exported session and compare its planes");
  replay->add_option("--record", record_path, "exported session record")->required();
  replay->add_option("--gallery-dir", replay_gallery, "gallery directory for meta methods");
  replay->add_option("--out", replay_out, "write the replayed record here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) return run_simulate(function, methods, iters, seeds, seed, out, users, population_users, plot, quiet, sim_flags);
    if (*pop)
      return run_populate(pop_function, method, pop_users, pop_iters, pop_seed, pop_out, theme, created_at, pop_quiet,
                          pop_flags);
    if (*serve) return run_serve(port, host, gallery_dir, images_dir, config, serve_seed);
    if (*inspect) return run_inspect(model_path, session_path, inspect_seed);
    if (*replay) return run_replay(record_path, replay_gallery, replay_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
