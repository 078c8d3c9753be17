#pragma once

// HTTP facade over the session engine. Handlers are plain member functions
// returning {status, body} so they can be exercised without a socket;
// mount() wires them into a cpp-httplib server.

#include "metapo/png_io.hpp"
#include "metapo/store.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>

namespace metapo {

struct ApiResponse {
  int status = 200;
  std::string body;
};

struct ServiceOptions {
  std::filesystem::path gallery_dir;
  std::filesystem::path images_dir;
  /// Session defaults; method, dimension, seed and gallery are set per request.
  SessionConfig defaults{};
  double degrade_after_seconds = 5.0;
  double budget_seconds = 10.0;

  /// Overrides from a JSON config file; unknown keys are ignored.
  void apply_json(const nlohmann::json& j) {
    if (j.contains("max_iterations")) defaults.max_iterations = j.at("max_iterations").get<int>();
    if (j.contains("maximizer")) {
      defaults.maximizer.starts = j["maximizer"].value("starts", defaults.maximizer.starts);
      defaults.maximizer.iters = j["maximizer"].value("iters", defaults.maximizer.iters);
    }
    if (j.contains("decay")) {
      defaults.decay.d1 = j["decay"].value("d1", defaults.decay.d1);
      defaults.decay.d2 = j["decay"].value("d2", defaults.decay.d2);
    }
    if (j.contains("rejected")) defaults.rejected = rejected_set_from_string(j.at("rejected").get<std::string>());
    if (j.contains("two_step_mode"))
      defaults.two_step_mode = j.at("two_step_mode").get<std::string>() == "mc" ? TwoStepMode::mc : TwoStepMode::augment;
    defaults.fit.restarts = j.value("fit_restarts", defaults.fit.restarts);
    defaults.refit_restarts = j.value("refit_restarts", defaults.refit_restarts);
    degrade_after_seconds = j.value("degrade_after_seconds", degrade_after_seconds);
    budget_seconds = j.value("budget_seconds", budget_seconds);
  }

  void load_config_file(const std::filesystem::path& path) {
    try {
      apply_json(nlohmann::json::parse(detail::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
  }
};

/// Gallery reference naming the exact member models.
inline std::string gallery_ref_for(const LoadedGallery& g) {
  std::string ref = "models:";
  for (std::size_t i = 0; i < g.entries.size(); ++i) ref += (i ? "," : "") + g.entries[i].id;
  return ref;
}

/// Keeps only the models listed by a "models:" reference, in reference order.
inline LoadedGallery select_gallery(const LoadedGallery& all, const std::string& ref) {
  const std::string prefix = "models:";
  if (ref.rfind(prefix, 0) != 0) throw InvalidInput("unsupported gallery reference: " + ref);
  LoadedGallery out;
  out.gallery = std::make_shared<PopulationGallery>();
  std::stringstream ss(ref.substr(prefix.size()));
  std::string id;
  while (std::getline(ss, id, ',')) {
    bool found = false;
    for (const auto& m : all.entries) {
      if (m.id != id) continue;
      out.gallery->add(std::make_shared<const PreferenceGP>(m.model), m.theme);
      out.entries.push_back(m);
      found = true;
      break;
    }
    if (!found) throw InvalidInput("gallery lacks referenced model " + id);
  }
  return out;
}

class SessionService {
 public:
  static constexpr Eigen::Index kDimension = kEnhancementParams;

  explicit SessionService(ServiceOptions opt) : opt_(std::move(opt)) {
    namespace fs = std::filesystem;
    if (!opt_.images_dir.empty() && fs::is_directory(opt_.images_dir)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(opt_.images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add_image(f.stem().string(), read_png(f));
    }
    std::random_device rd;
    token_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  void add_image(const std::string& id, const RgbImage& image) {
    std::unique_lock lock(images_mutex_);
    images_[id] = downscale(image);
  }

  ApiResponse create_session(const std::string& body) {
    nlohmann::json req;
    if (auto err = parse_body(body, req)) return *err;
    if (!req.contains("method") || !req["method"].is_string()) return error(400, "invalid_config", "missing method");
    if (!req.contains("image_id") || !req["image_id"].is_string())
      return error(400, "invalid_config", "missing image_id");
    SessionConfig cfg = opt_.defaults;
    cfg.dimension = kDimension;
    try {
      cfg.method = method_from_string(req["method"].get<std::string>());
      if (req.contains("seed")) cfg.seed = req["seed"].get<std::uint64_t>();
      if (req.contains("max_iterations")) cfg.max_iterations = req["max_iterations"].get<int>();
    } catch (const ConfigError& e) {
      return error(400, "invalid_config", e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(400, "invalid_config", e.what());
    }
    const std::string image_id = req["image_id"].get<std::string>();
    const std::string theme = req.value("theme", std::string());
    if (!find_image(image_id)) return error(404, "unknown_image", "no image " + image_id);

    std::shared_ptr<const PopulationGallery> gallery;
    if (is_meta(cfg.method)) {
      LoadedGallery g;
      try {
        g = load_gallery(opt_.gallery_dir, kDimension);
      } catch (const Error& e) {
        return error(409, "gallery_mismatch", e.what());
      }
      if (req.contains("gallery_filter") && req["gallery_filter"].contains("themes")) {
        const auto themes = req["gallery_filter"]["themes"].get<std::vector<std::string>>();
        LoadedGallery f;
        f.gallery = std::make_shared<PopulationGallery>();
        for (const auto& m : g.entries) {
          if (std::find(themes.begin(), themes.end(), m.theme) == themes.end()) continue;
          f.gallery->add(std::make_shared<const PreferenceGP>(m.model), m.theme);
          f.entries.push_back(m);
        }
        g = std::move(f);
      }
      if (g.entries.empty()) return error(409, "gallery_mismatch", "no population models match the request");
      std::string offenders;
      for (const auto& m : g.entries)
        if (m.plane_strategy != plane_strategy(cfg.method)) offenders += (offenders.empty() ? "" : ", ") + m.id;
      if (!offenders.empty())
        return error(409, "gallery_mismatch",
                     to_string(cfg.method) + " needs " + plane_strategy(cfg.method) + " models; incompatible: " + offenders);
      cfg.gallery_ref = gallery_ref_for(g);
      gallery = g.gallery;
    }

    auto entry = std::make_shared<Entry>();
    try {
      auto [st, plane] = start_session(cfg, gallery);
      entry->state = std::move(st);
    } catch (const ConfigError& e) {
      return error(cfg.gallery_ref ? 409 : 400, "invalid_config", e.what());
    } catch (const Error& e) {
      return error(500, "internal", e.what());
    }
    entry->theme = theme;
    entry->image_id = image_id;
    entry->created_at = utc_timestamp();
    entry->id = new_token();
    refresh(*entry);
    {
      std::unique_lock lock(sessions_mutex_);
      sessions_[entry->id] = entry;
    }
    return {201, entry->resource()};
  }

  ApiResponse select(const std::string& id, const std::string& body) {
    auto entry = find(id);
    if (!entry) return error(404, "unknown_session", "no session " + id);
    nlohmann::json req;
    if (auto err = parse_body(body, req)) return *err;
    const std::string key = req.value("idempotency_key", std::string());

    std::unique_lock lock(entry->mutate, std::try_to_lock);
    if (!lock.owns_lock()) return error(409, "busy", "another selection is being processed");
    if (!key.empty()) {
      const auto it = entry->replies.find(key);
      if (it != entry->replies.end()) return it->second;
    }
    SessionState& st = entry->state;
    if (st.terminated()) return error(409, "terminated", "session is " + to_string(st.status));
    if (req.contains("iteration") && (!req["iteration"].is_number_integer() || req["iteration"].get<int>() != st.iteration))
      return error(409, "stale", "selection is for iteration " + req["iteration"].dump() + ", current is " +
                                     std::to_string(st.iteration));
    if (!req.contains("grid_index") || !req["grid_index"].is_number_integer())
      return error(422, "bad_index", "grid_index must be an integer in 0..24");
    const int idx = req["grid_index"].get<int>();
    if (idx < 0 || idx >= kGridSize) return error(422, "bad_index", "grid_index must be an integer in 0..24");
    const bool satisfied = req.value("satisfied", false);

    const auto t0 = std::chrono::steady_clock::now();
    try {
      submit_selection(st, idx, satisfied, entry->degrade_next);
    } catch (const Error& e) {
      return error(500, "internal", e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > opt_.degrade_after_seconds) entry->degrade_next = true;
    if (secs > opt_.budget_seconds)
      st.warnings.push_back("iteration " + std::to_string(st.selections.size()) + " took " + std::to_string(secs) + " s");
    refresh(*entry);
    ApiResponse r{200, entry->resource()};
    if (!key.empty()) entry->replies[key] = r;
    return r;
  }

  ApiResponse get_session(const std::string& id) const {
    auto entry = find(id);
    if (!entry) return error(404, "unknown_session", "no session " + id);
    return {200, entry->resource()};
  }

  ApiResponse export_session(const std::string& id) const {
    auto entry = find(id);
    if (!entry) return error(404, "unknown_session", "no session " + id);
    return {200, entry->exported()};
  }

  ApiResponse population() const {
    nlohmann::ordered_json out;
    out["schema_version"] = kSchemaVersion;
    out["models"] = nlohmann::ordered_json::array();
    std::vector<StoredModel> models;
    try {
      for (const auto& p : model_files(opt_.gallery_dir)) models.push_back(load_model(p));
    } catch (const Error& e) {
      return error(500, "store", e.what());
    }
    std::sort(models.begin(), models.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (const auto& m : models) {
      nlohmann::ordered_json e;
      e["id"] = m.id;
      e["theme"] = m.theme;
      e["method"] = m.method;
      e["plane_strategy"] = m.plane_strategy;
      e["dimension"] = m.dimension;
      e["observations"] = m.source.size();
      e["created_at"] = m.created_at;
      out["models"].push_back(std::move(e));
    }
    out["count"] = models.size();
    return {200, out.dump()};
  }

  ApiResponse images() const {
    nlohmann::ordered_json out;
    out["schema_version"] = kSchemaVersion;
    out["images"] = nlohmann::ordered_json::array();
    std::shared_lock lock(images_mutex_);
    for (const auto& [id, img] : images_) out["images"].push_back({{"id", id}, {"width", img.width}, {"height", img.height}});
    return {200, out.dump()};
  }

  void mount(httplib::Server& server) {
    const auto send = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_content(r.body, "application/json");
    };
    server.Post("/api/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, create_session(req.body));
    });
    server.Post(R"(/api/sessions/([^/]+)/select)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, select(req.matches[1], req.body));
    });
    server.Get(R"(/api/sessions/([^/]+)/export)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, export_session(req.matches[1]));
    });
    server.Get(R"(/api/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_session(req.matches[1]));
    });
    server.Get("/api/population", [this, send](const httplib::Request&, httplib::Response& res) { send(res, population()); });
    server.Get("/api/images", [this, send](const httplib::Request&, httplib::Response& res) { send(res, images()); });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.status = 204;
    });
  }

  const ServiceOptions& options() const noexcept { return opt_; }

 private:
  struct Entry {
    std::string id, theme, image_id, created_at;
    std::mutex mutate;  // held for the whole select
    SessionState state;
    bool degrade_next = false;
    std::map<std::string, ApiResponse> replies;

    mutable std::mutex snap;  // guards the two published documents
    std::string resource_json, export_json;

    std::string resource() const {
      std::lock_guard g(snap);
      return resource_json;
    }
    std::string exported() const {
      std::lock_guard g(snap);
      return export_json;
    }
  };

  static std::optional<ApiResponse> parse_body(const std::string& body, nlohmann::json& out) {
    try {
      out = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return error(400, "bad_request", "body is not valid JSON");
    }
    if (!out.is_object()) return error(400, "bad_request", "body must be a JSON object");
    return std::nullopt;
  }

  static ApiResponse error(int status, const std::string& code, const std::string& message) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["error"] = {{"code", code}, {"message", message}};
    return {status, j.dump()};
  }

  std::optional<RgbImage> find_image(const std::string& id) const {
    std::shared_lock lock(images_mutex_);
    const auto it = images_.find(id);
    if (it == images_.end()) return std::nullopt;
    return it->second;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::string new_token() {
    const std::uint64_t n = ++counter_;
    return "s" + std::to_string(n) + "-" + detail::hex64(mix_seed(token_salt_ ^ n)).substr(0, 8);
  }

  static nlohmann::ordered_json vec(const ParamVector& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  }

  /// Rebuilds both published documents from the session state (caller holds `mutate`).
  void refresh(Entry& e) const {
    const SessionState& st = e.state;
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = e.id;
    j["method"] = to_string(st.config.method);
    j["theme"] = e.theme;
    j["image_id"] = e.image_id;
    j["seed"] = st.config.seed;
    j["status"] = to_string(st.status);
    j["iteration"] = st.iteration;
    j["max_iterations"] = st.config.max_iterations;
    j["selections_made"] = st.selections.size();
    j["least_iteration"] = st.least_iteration ? nlohmann::ordered_json(*st.least_iteration) : nlohmann::ordered_json();
    j["warnings"] = st.warnings;
    if (st.terminated()) {
      j["plane"] = nullptr;
    } else {
      const SearchPlane& p = st.current_plane();
      const auto img = find_image(e.image_id);
      std::vector<RgbImage> thumbs;
      if (img) thumbs = thumbnail_grid(*img, p);
      nlohmann::ordered_json plane;
      plane["iteration"] = st.iteration;
      plane["center"] = vec(p.center);
      plane["corner1"] = vec(p.corner1);
      plane["corner2"] = vec(p.corner2);
      plane["candidates"] = nlohmann::ordered_json::array();
      for (int i = 0; i < kGridSize; ++i) {
        nlohmann::ordered_json c;
        c["index"] = i;
        c["params"] = vec(p.grid[static_cast<std::size_t>(i)]);
        c["thumbnail"] = thumbs.empty() ? std::string() : png_data_uri(thumbs[static_cast<std::size_t>(i)]);
        plane["candidates"].push_back(std::move(c));
      }
      j["plane"] = std::move(plane);
    }
    std::string resource = j.dump();
    std::string exported = to_json(metapo::export_session(st, e.theme, e.created_at));
    std::lock_guard g(e.snap);
    e.resource_json = std::move(resource);
    e.export_json = std::move(exported);
  }

  ServiceOptions opt_;
  mutable std::shared_mutex images_mutex_;
  std::map<std::string, RgbImage> images_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::atomic<std::uint64_t> counter_{0};
  std::uint64_t token_salt_ = 0;
};

}  // namespace metapo
