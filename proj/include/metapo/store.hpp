#pragma once

// Session records and stored population models as checksummed JSON text.
//
// Documents are compact JSON with a fixed key order; doubles are written with
// 17 significant digits so they read back bit-exactly. The last member is
// "checksum": FNV-1a-64 (hex) over every byte before the `,"checksum":` text.

#include "metapo/session.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace metapo {

inline constexpr int kSchemaVersion = 1;

namespace detail {

class JsonWriter {
 public:
  JsonWriter& begin_object() { sep(); out_ += '{'; first_ = true; return *this; }
  JsonWriter& end_object() { out_ += '}'; first_ = false; return *this; }
  JsonWriter& begin_array() { sep(); out_ += '['; first_ = true; return *this; }
  JsonWriter& end_array() { out_ += ']'; first_ = false; return *this; }
  JsonWriter& key(const std::string& k) {
    sep();
    string_literal(k);
    out_ += ':';
    first_ = true;
    return *this;
  }
  JsonWriter& value(double v) {
    if (!std::isfinite(v)) throw InvalidInput("cannot serialize non-finite number");
    sep();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out_ += buf;
    return *this;
  }
  JsonWriter& value(std::int64_t v) { sep(); out_ += std::to_string(v); return *this; }
  JsonWriter& value(int v) { return value(static_cast<std::int64_t>(v)); }
  JsonWriter& value(std::uint64_t v) { sep(); out_ += std::to_string(v); return *this; }
  JsonWriter& value(bool v) { sep(); out_ += v ? "true" : "false"; return *this; }
  JsonWriter& value(const std::string& s) { sep(); string_literal(s); return *this; }
  JsonWriter& value(const char* s) { return value(std::string(s)); }
  JsonWriter& null() { sep(); out_ += "null"; return *this; }
  JsonWriter& vector(const Eigen::VectorXd& v) {
    begin_array();
    for (Eigen::Index i = 0; i < v.size(); ++i) value(v[i]);
    return end_array();
  }
  JsonWriter& raw(const std::string& json) { sep(); out_ += json; return *this; }

  const std::string& str() const noexcept { return out_; }
  std::string take() { return std::move(out_); }

 private:
  void sep() {
    if (!first_) out_ += ',';
    first_ = false;
  }
  void string_literal(const std::string& s) {
    out_ += '"';
    for (unsigned char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\r': out_ += "\\r"; break;
        case '\t': out_ += "\\t"; break;
        default:
          if (c < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            out_ += buf;
          } else {
            out_ += static_cast<char>(c);
          }
      }
    }
    out_ += '"';
  }
  std::string out_;
  bool first_ = true;
};

inline const std::string kChecksumKey = ",\"checksum\":\"";

inline std::string checksum_of(const std::string& bytes) {
  std::uint64_t h = kFnvOffset;
  fnv1a(h, bytes.data(), bytes.size());
  return hex64(h);
}

/// Appends the checksum member and closes the top-level object.
inline std::string seal(std::string body_without_closing_brace) {
  const std::string sum = checksum_of(body_without_closing_brace);
  return body_without_closing_brace + kChecksumKey + sum + "\"}\n";
}

/// Verifies the checksum and parses the document.
inline nlohmann::json unseal(const std::string& text, const std::string& origin) {
  const auto pos = text.rfind(kChecksumKey);
  if (pos == std::string::npos) throw IoError("document has no checksum", origin);
  const auto start = pos + kChecksumKey.size();
  if (text.size() < start + 16) throw IoError("truncated checksum", origin);
  const std::string stored = text.substr(start, 16);
  if (checksum_of(text.substr(0, pos)) != stored) throw IoError("checksum mismatch", origin);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed document (") + e.what() + ")", origin);
  }
}

inline Eigen::VectorXd json_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline void write_points(JsonWriter& w, const std::vector<ParamVector>& pts) {
  w.begin_array();
  for (const auto& p : pts) w.vector(p);
  w.end_array();
}

inline void write_model(JsonWriter& w, const PreferenceGP& gp) {
  const auto& h = gp.hyperparams();
  w.begin_object();
  w.key("hyperparams").begin_object();
  w.key("signal_variance").value(h.signal_variance);
  w.key("length_scales").vector(h.length_scales);
  w.key("noise_variance").value(h.noise_variance);
  w.end_object();
  w.key("prior_mean").value(gp.prior_mean());
  w.key("observed_points").begin_array();
  for (Eigen::Index i = 0; i < gp.num_points(); ++i) w.vector(gp.observed_points().col(i));
  w.end_array();
  w.key("latent").vector(gp.latent());
  w.key("dataset_ref").value(gp.dataset_ref());
  w.end_object();
}

inline PreferenceGP read_model(const nlohmann::json& j, Eigen::Index dimension) {
  KernelHyperparams h;
  h.signal_variance = j.at("hyperparams").at("signal_variance").get<double>();
  h.length_scales = json_vector(j.at("hyperparams").at("length_scales"));
  h.noise_variance = j.at("hyperparams").at("noise_variance").get<double>();
  if (h.length_scales.size() != dimension) throw InvalidInput("model dimension does not match document");
  const auto& pts = j.at("observed_points");
  PointMatrix P(dimension, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::VectorXd p = json_vector(pts[i]);
    if (p.size() != dimension) throw InvalidInput("observed point has wrong dimension");
    P.col(static_cast<Eigen::Index>(i)) = p;
  }
  return PreferenceGP(h, P, json_vector(j.at("latent")), j.at("dataset_ref").get<std::string>(),
                      j.value("prior_mean", 0.0));
}

inline void write_events(JsonWriter& w, const std::vector<SelectionEvent>& events, const std::vector<int>* grid_indices,
                         const std::vector<bool>* degraded = nullptr) {
  w.begin_array();
  for (std::size_t e = 0; e < events.size(); ++e) {
    w.begin_object();
    w.key("iteration").value(events[e].iteration_index);
    if (grid_indices) w.key("grid_index").value((*grid_indices)[e]);
    if (degraded) w.key("degraded").value(static_cast<bool>((*degraded)[e]));
    w.key("chosen").vector(events[e].chosen);
    w.key("rejected");
    write_points(w, events[e].rejected);
    w.end_object();
  }
  w.end_array();
}

inline std::vector<SelectionEvent> read_events(const nlohmann::json& j, std::vector<int>* grid_indices,
                                               std::vector<bool>* degraded = nullptr) {
  std::vector<SelectionEvent> out;
  for (const auto& e : j) {
    SelectionEvent ev;
    ev.iteration_index = e.at("iteration").get<int>();
    ev.chosen = json_vector(e.at("chosen"));
    for (const auto& r : e.at("rejected")) ev.rejected.push_back(json_vector(r));
    if (grid_indices) grid_indices->push_back(e.value("grid_index", -1));
    if (degraded) degraded->push_back(e.value("degraded", false));
    out.push_back(std::move(ev));
  }
  return out;
}

inline void write_config(JsonWriter& w, const SessionConfig& c) {
  w.begin_object();
  w.key("dimension").value(static_cast<std::int64_t>(c.dimension));
  w.key("method").value(to_string(c.method));
  w.key("max_iterations").value(c.max_iterations);
  w.key("decay").begin_object().key("d1").value(c.decay.d1).key("d2").value(c.decay.d2).end_object();
  w.key("seed").value(c.seed);
  w.key("gallery_ref");
  if (c.gallery_ref) w.value(*c.gallery_ref); else w.null();
  w.key("maximizer").begin_object();
  w.key("starts").value(c.maximizer.starts).key("iters").value(c.maximizer.iters);
  w.key("initial_step").value(c.maximizer.initial_step).key("min_step").value(c.maximizer.min_step);
  w.end_object();
  w.key("fit").begin_object();
  w.key("restarts").value(c.fit.restarts).key("refit_restarts").value(c.refit_restarts);
  w.key("max_iterations").value(c.fit.optimizer.max_iterations).key("gtol").value(c.fit.optimizer.gtol);
  w.key("warm_start").value(c.warm_start);
  w.end_object();
  w.key("two_step").begin_object();
  w.key("mode").value(c.two_step_mode == TwoStepMode::augment ? "augment" : "mc");
  w.key("mc_samples").value(c.mc_samples);
  w.end_object();
  w.key("rejected").value(to_string(c.rejected));
  w.end_object();
}

inline SessionConfig read_config(const nlohmann::json& j) {
  SessionConfig c;
  c.dimension = j.at("dimension").get<Eigen::Index>();
  c.method = method_from_string(j.at("method").get<std::string>());
  c.max_iterations = j.at("max_iterations").get<int>();
  c.decay.d1 = j.at("decay").at("d1").get<int>();
  c.decay.d2 = j.at("decay").at("d2").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("gallery_ref").is_null()) c.gallery_ref = j.at("gallery_ref").get<std::string>();
  const auto& m = j.at("maximizer");
  c.maximizer.starts = m.at("starts").get<int>();
  c.maximizer.iters = m.at("iters").get<int>();
  c.maximizer.initial_step = m.value("initial_step", c.maximizer.initial_step);
  c.maximizer.min_step = m.value("min_step", c.maximizer.min_step);
  const auto& f = j.at("fit");
  c.fit.restarts = f.at("restarts").get<int>();
  c.refit_restarts = f.value("refit_restarts", c.refit_restarts);
  c.fit.optimizer.max_iterations = f.at("max_iterations").get<int>();
  c.fit.optimizer.gtol = f.at("gtol").get<double>();
  c.warm_start = f.value("warm_start", c.warm_start);
  const auto& t = j.at("two_step");
  c.two_step_mode = t.at("mode").get<std::string>() == "mc" ? TwoStepMode::mc : TwoStepMode::augment;
  c.mc_samples = t.at("mc_samples").get<int>();
  c.rejected = rejected_set_from_string(j.value("rejected", std::string("grid")));
  return c;
}

}  // namespace detail

/// ISO-8601 UTC timestamp, second resolution.
inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SessionRecord {
  SessionConfig config;
  SessionStatus status = SessionStatus::awaiting_selection;
  int iteration = 1;
  std::optional<int> least_iteration;
  std::vector<SelectionEvent> events;
  std::vector<int> selections;
  std::vector<bool> degraded;
  /// center and corners of every presented plane; grids are rebuilt from them.
  std::vector<SearchPlane> planes;
  std::optional<PreferenceGP> model;
  std::string theme;
  std::string created_at;

  bool partial() const noexcept { return status == SessionStatus::awaiting_selection; }
};

inline SessionRecord export_session(const SessionState& st, const std::string& theme = {},
                                    const std::string& created_at = {}) {
  SessionRecord r;
  r.config = st.config;
  r.status = st.status;
  r.iteration = st.iteration;
  r.least_iteration = st.least_iteration;
  r.events = st.dataset.events();
  r.selections = st.selections;
  r.degraded = st.degraded;
  r.degraded.resize(r.selections.size(), false);
  r.planes = st.plane_history;
  if (st.current_model) r.model = *st.current_model;
  r.theme = theme;
  r.created_at = created_at.empty() ? utc_timestamp() : created_at;
  return r;
}

inline std::string to_json(const SessionRecord& r) {
  detail::JsonWriter w;
  w.begin_object();
  w.key("schema_version").value(kSchemaVersion);
  w.key("kind").value("session_record");
  w.key("partial").value(r.partial());
  w.key("theme").value(r.theme);
  w.key("created_at").value(r.created_at);
  w.key("plane_strategy").value(plane_strategy(r.config.method));
  w.key("config");
  detail::write_config(w, r.config);
  w.key("status").value(to_string(r.status));
  w.key("iteration").value(r.iteration);
  w.key("least_iteration");
  if (r.least_iteration) w.value(*r.least_iteration); else w.null();
  w.key("events");
  detail::write_events(w, r.events, &r.selections, &r.degraded);
  w.key("planes").begin_array();
  for (const auto& p : r.planes) {
    w.begin_object();
    w.key("center").vector(p.center).key("corner1").vector(p.corner1).key("corner2").vector(p.corner2);
    w.end_object();
  }
  w.end_array();
  w.key("model");
  if (r.model) detail::write_model(w, *r.model); else w.null();
  std::string body = w.take();  // object still open
  return detail::seal(std::move(body));
}

inline SessionRecord parse_session_record(const std::string& text, const std::string& origin = "<memory>") {
  const nlohmann::json j = detail::unseal(text, origin);
  try {
    if (j.at("kind").get<std::string>() != "session_record") throw IoError("not a session record", origin);
    if (j.at("schema_version").get<int>() > kSchemaVersion) throw IoError("unsupported schema version", origin);
    SessionRecord r;
    r.config = detail::read_config(j.at("config"));
    r.theme = j.value("theme", std::string());
    r.created_at = j.value("created_at", std::string());
    r.status = session_status_from_string(j.at("status").get<std::string>());
    r.iteration = j.at("iteration").get<int>();
    if (!j.at("least_iteration").is_null()) r.least_iteration = j.at("least_iteration").get<int>();
    r.events = detail::read_events(j.at("events"), &r.selections, &r.degraded);
    for (const auto& p : j.at("planes"))
      r.planes.push_back(build_plane(detail::json_vector(p.at("center")), detail::json_vector(p.at("corner1")),
                                     detail::json_vector(p.at("corner2"))));
    if (!j.at("model").is_null()) r.model = detail::read_model(j.at("model"), r.config.dimension);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed session record (") + e.what() + ")", origin);
  }
}

inline PreferenceDataset dataset_of(const SessionRecord& r) {
  PreferenceDataset d(r.config.dimension);
  for (const auto& e : r.events) d.append(e);
  return d;
}

/// Re-runs the recorded selections from the recorded config. The returned
/// state's planes can be compared with `r.planes` to check reproducibility.
inline SessionState replay_session(const SessionRecord& r, std::shared_ptr<const PopulationGallery> gallery = nullptr) {
  auto [st, plane] = start_session(r.config, std::move(gallery));
  for (std::size_t e = 0; e < r.selections.size(); ++e) {
    const bool last = e + 1 == r.selections.size();
    const bool satisfied = last && r.status == SessionStatus::satisfied;
    if (r.selections[e] < 0) throw InvalidInput("record lacks grid indices; cannot replay");
    submit_selection(st, r.selections[e], satisfied, r.degraded[e]);
  }
  return std::move(st);
}

inline bool same_planes(const std::vector<SearchPlane>& a, const std::vector<SearchPlane>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!exactly_equal(a[i].center, b[i].center) || !exactly_equal(a[i].corner1, b[i].corner1) ||
        !exactly_equal(a[i].corner2, b[i].corner2))
      return false;
  }
  return true;
}

struct StoredModel {
  int schema_version = kSchemaVersion;
  std::string id;
  Eigen::Index dimension = 0;
  std::string method;
  std::string plane_strategy;
  std::string theme;
  std::string created_at;
  PreferenceGP model;
  PreferenceDataset source;
};

namespace detail {

inline std::string model_body(const StoredModel& m, bool with_created_at) {
  JsonWriter w;
  w.begin_object();
  w.key("schema_version").value(m.schema_version);
  w.key("kind").value("model");
  w.key("id").value(m.id);
  w.key("dimension").value(static_cast<std::int64_t>(m.dimension));
  w.key("method").value(m.method);
  w.key("plane_strategy").value(m.plane_strategy);
  w.key("theme").value(m.theme);
  if (with_created_at) w.key("created_at").value(m.created_at);
  w.key("model");
  write_model(w, m.model);
  w.key("source_dataset").begin_object();
  w.key("id").value(m.source.content_id());
  w.key("events");
  write_events(w, m.source.events(), nullptr);
  w.end_object();
  return w.take();
}

inline std::string sanitize_theme(const std::string& theme) {
  std::string out;
  for (char c : theme) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '-';
  if (out.empty()) out = "untitled";
  return out;
}

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing", tmp.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw IoError("write failed", tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("rename failed", path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open", path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline StoredModel stored_model_from_record(const SessionRecord& r, const std::string& created_at = {}) {
  if (!r.model) throw InvalidInput("session record has no fitted model");
  StoredModel m;
  m.dimension = r.config.dimension;
  m.method = to_string(r.config.method);
  m.plane_strategy = plane_strategy(r.config.method);
  m.theme = r.theme;
  m.created_at = created_at.empty() ? (r.created_at.empty() ? utc_timestamp() : r.created_at) : created_at;
  m.model = *r.model;
  m.source = dataset_of(r);
  // Content id: independent of created_at.
  m.id = detail::checksum_of(detail::model_body(m, false));
  return m;
}

inline std::string to_json(const StoredModel& m) { return detail::seal(detail::model_body(m, true)); }

inline StoredModel parse_stored_model(const std::string& text, const std::string& origin = "<memory>") {
  const nlohmann::json j = detail::unseal(text, origin);
  try {
    if (j.at("kind").get<std::string>() != "model") throw IoError("not a stored model", origin);
    if (j.at("schema_version").get<int>() > kSchemaVersion) throw IoError("unsupported schema version", origin);
    StoredModel m;
    m.schema_version = j.at("schema_version").get<int>();
    m.id = j.at("id").get<std::string>();
    m.dimension = j.at("dimension").get<Eigen::Index>();
    m.method = j.at("method").get<std::string>();
    m.plane_strategy = j.at("plane_strategy").get<std::string>();
    m.theme = j.at("theme").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.model = detail::read_model(j.at("model"), m.dimension);
    m.source = PreferenceDataset(m.dimension);
    for (auto& e : detail::read_events(j.at("source_dataset").at("events"), nullptr)) m.source.append(std::move(e));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model document (") + e.what() + ")", origin);
  }
}

inline StoredModel load_model(const std::filesystem::path& path) {
  return parse_stored_model(detail::read_file(path), path.string());
}

inline std::string model_file_name(const StoredModel& m) {
  return detail::sanitize_theme(m.theme) + "__" + m.id + ".mpo.json";
}

/// Model files in a directory, sorted by file name.
inline std::vector<std::filesystem::path> model_files(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 9 && name.ends_with(".mpo.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Writes the record's final model into the gallery directory; returns its id.
inline std::string save_model(const SessionRecord& record, const std::filesystem::path& dir,
                              const std::string& created_at = {}) {
  namespace fs = std::filesystem;
  const StoredModel m = stored_model_from_record(record, created_at);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create gallery directory", dir.string());
  for (const auto& p : model_files(dir)) {
    const StoredModel other = load_model(p);
    if (other.dimension != m.dimension)
      throw InvalidInput("gallery " + dir.string() + " holds dimension " + std::to_string(other.dimension) +
                         " models; refusing dimension " + std::to_string(m.dimension));
  }
  detail::atomic_write(dir / model_file_name(m), to_json(m));
  return m.id;
}

struct LoadedGallery {
  std::shared_ptr<PopulationGallery> gallery;
  std::vector<StoredModel> entries;  // parallel to gallery->models
};

/// Loads every model in `dir`, ordered by id. Mixed dimensions are an error
/// listing the offenders. `plane_strategy` (when set) keeps matching models only.
inline LoadedGallery load_gallery(const std::filesystem::path& dir, Eigen::Index expected_dimension,
                                  const std::optional<std::string>& plane_strategy_filter = std::nullopt) {
  const auto files = model_files(dir);
  if (files.empty()) throw InvalidState("empty gallery: no *.mpo.json models in " + dir.string());
  std::vector<StoredModel> models;
  std::string offenders;
  for (const auto& p : files) {
    StoredModel m = load_model(p);
    if (m.dimension != expected_dimension) {
      offenders += (offenders.empty() ? "" : ", ") + p.filename().string() + " (d=" + std::to_string(m.dimension) + ")";
      continue;
    }
    if (plane_strategy_filter && m.plane_strategy != *plane_strategy_filter) continue;
    models.push_back(std::move(m));
  }
  if (!offenders.empty())
    throw InvalidInput("gallery models with dimension other than " + std::to_string(expected_dimension) + ": " + offenders);
  std::sort(models.begin(), models.end(), [](const StoredModel& a, const StoredModel& b) { return a.id < b.id; });
  LoadedGallery out;
  out.gallery = std::make_shared<PopulationGallery>();
  for (auto& m : models) out.gallery->add(std::make_shared<const PreferenceGP>(m.model), m.theme);
  out.entries = std::move(models);
  return out;
}

}  // namespace metapo
