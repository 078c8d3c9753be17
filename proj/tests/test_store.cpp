#include "metapo/store.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace metapo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("metapo_store_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SessionConfig config(Method m, Eigen::Index d = 2, std::uint64_t seed = 3) {
  SessionConfig c;
  c.dimension = d;
  c.method = m;
  c.max_iterations = 4;
  c.seed = seed;
  c.maximizer = {12, 25};
  c.fit.restarts = 1;
  c.refit_restarts = 1;
  c.rejected = RejectedSet::vertices;
  if (is_meta(m)) c.gallery_ref = "models:x";
  return c;
}

SessionState run(const SessionConfig& c, std::shared_ptr<const PopulationGallery> g = nullptr, int picks = 4) {
  auto [st, plane] = start_session(c, std::move(g));
  for (int i = 0; i < picks && !st.terminated(); ++i) submit_selection(st, (7 * i + 3) % kGridSize, false);
  return std::move(st);
}

}  // namespace

TEST(Store, ModelRoundTripPredictsIdentically) {
  const SessionState st = run(config(Method::no_transfer_o, 3));
  const SessionRecord rec = export_session(st, "sunset", "2026-01-01T00:00:00Z");
  const StoredModel m = stored_model_from_record(rec);
  const StoredModel back = parse_stored_model(to_json(m));
  EXPECT_EQ(back.id, m.id);
  EXPECT_EQ(back.theme, "sunset");
  EXPECT_EQ(back.plane_strategy, "orthogonal");
  EXPECT_EQ(back.source.content_id(), st.dataset.content_id());
  Rng r(1);
  for (int i = 0; i < 100; ++i) {
    const ParamVector x = r.uniform_point(3);
    const auto a = m.model.predict(x), b = back.model.predict(x);
    EXPECT_NEAR(a.mean, b.mean, 1e-12);
    EXPECT_NEAR(a.variance, b.variance, 1e-12);
  }
  EXPECT_EQ(to_json(back), to_json(m));
}

TEST(Store, ChecksumDetectsCorruption) {
  const SessionRecord rec = export_session(run(config(Method::no_transfer_o)), "t", "2026-01-01T00:00:00Z");
  std::string text = to_json(stored_model_from_record(rec));
  const auto pos = text.find("\"theme\":\"t\"");
  ASSERT_NE(pos, std::string::npos);
  text[pos + 9] = 'u';
  EXPECT_THROW(parse_stored_model(text), IoError);
  EXPECT_THROW(parse_stored_model(text.substr(0, text.size() / 2)), IoError);
  EXPECT_THROW(parse_stored_model("not json"), IoError);
}

TEST(Store, IdIgnoresCreationTime) {
  const SessionRecord rec = export_session(run(config(Method::no_transfer_t)), "a", "2026-01-01T00:00:00Z");
  const StoredModel a = stored_model_from_record(rec, "2026-01-01T00:00:00Z");
  const StoredModel b = stored_model_from_record(rec, "2026-05-05T12:00:00Z");
  EXPECT_EQ(a.id, b.id);
  std::string ja = to_json(a), jb = to_json(b);
  EXPECT_NE(ja, jb);
  const auto strip = [](std::string s) {
    const auto p = s.find("\"created_at\":\"");
    s.erase(p, s.find('"', p + 14) - p + 1);
    return s.substr(0, s.find(",\"checksum\""));
  };
  EXPECT_EQ(strip(ja), strip(jb));
}

TEST(Store, SessionRecordRoundTrip) {
  const SessionState st = run(config(Method::no_transfer_t));
  const SessionRecord rec = export_session(st, "theme", "2026-01-01T00:00:00Z");
  const std::string text = to_json(rec);
  const SessionRecord back = parse_session_record(text);
  EXPECT_EQ(to_json(back), text);
  EXPECT_EQ(back.selections, st.selections);
  EXPECT_EQ(back.config.seed, st.config.seed);
  EXPECT_TRUE(same_planes(back.planes, st.plane_history));
  EXPECT_FALSE(back.partial());
  EXPECT_EQ(back.status, SessionStatus::exhausted);
}

TEST(Store, PartialRecordReplays) {
  const SessionState st = run(config(Method::no_transfer_t), nullptr, 2);
  const SessionRecord rec = parse_session_record(to_json(export_session(st)));
  EXPECT_TRUE(rec.partial());
  const SessionState again = replay_session(rec);
  EXPECT_TRUE(same_planes(again.plane_history, rec.planes));
  EXPECT_EQ(again.iteration, rec.iteration);
}

TEST(Store, GalleryOrderingAndFixpoint) {
  TempDir dir("order");
  std::vector<std::string> ids;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const SessionRecord rec = export_session(run(config(Method::no_transfer_t, 2, 10 + s)), s % 2 ? "warm" : "cool");
    ids.push_back(save_model(rec, dir.path, "2026-02-02T00:00:00Z"));
  }
  std::sort(ids.begin(), ids.end());
  const LoadedGallery g = load_gallery(dir.path, 2);
  ASSERT_EQ(g.entries.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.entries[i].id, ids[i]);
  EXPECT_EQ(g.gallery->source_labels.size(), 4u);
  // re-saving a loaded model reproduces the file byte for byte
  for (const auto& p : model_files(dir.path)) {
    const StoredModel m = load_model(p);
    std::ifstream in(p, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(to_json(m), bytes);
    EXPECT_EQ(p.filename().string(), model_file_name(m));
  }
  const LoadedGallery orth = load_gallery(dir.path, 2, std::string("orthogonal"));
  EXPECT_TRUE(orth.entries.empty());
}

TEST(Store, EmptyAndMixedGalleries) {
  TempDir dir("mixed");
  EXPECT_THROW(load_gallery(dir.path, 2), InvalidState);
  save_model(export_session(run(config(Method::no_transfer_o, 2))), dir.path);
  EXPECT_THROW(save_model(export_session(run(config(Method::no_transfer_o, 3))), dir.path), InvalidInput);
  // a foreign file dropped in by hand
  const SessionRecord rec3 = export_session(run(config(Method::no_transfer_o, 3)));
  const StoredModel m3 = stored_model_from_record(rec3);
  std::ofstream(dir.path / model_file_name(m3)) << to_json(m3);
  try {
    load_gallery(dir.path, 2);
    FAIL() << "mixed dimensions accepted";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find(model_file_name(m3)), std::string::npos);
  }
}

TEST(Store, ReplayRebuildsMetaSession) {
  TempDir dir("replay");
  for (std::uint64_t s = 0; s < 2; ++s)
    save_model(export_session(run(config(Method::no_transfer_t, 2, 20 + s))), dir.path);
  const LoadedGallery g = load_gallery(dir.path, 2);
  const SessionState st = run(config(Method::meta_po_r_t), g.gallery, 3);
  const SessionRecord rec = parse_session_record(to_json(export_session(st)));
  const SessionState again = replay_session(rec, g.gallery);
  EXPECT_TRUE(same_planes(again.plane_history, st.plane_history));
  EXPECT_THROW(replay_session(rec), ConfigError);
}

TEST(Store, WriterRejectsNonFinite) {
  detail::JsonWriter w;
  EXPECT_THROW(w.value(std::nan("")), InvalidInput);
}
