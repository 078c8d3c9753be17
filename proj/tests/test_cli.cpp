#include "metapo/store.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

using namespace metapo;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args`; stdout is captured, stderr discarded.
Result cli(const std::string& args) {
  const std::string cmd = std::string(METAPO_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  Result r;
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kFast = "--starts 10 --maximizer-iters 20 --fit-restarts 1 --refit-restarts 1 --quiet";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("metapo_cli_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("simulate --function hartmann3").code, 2);  // --out missing
  EXPECT_EQ(cli("simulate --function nope --out " + dir_.string()).code, 2);
  EXPECT_EQ(cli("simulate --function hartmann3 --methods bogus --out " + dir_.string()).code, 2);
  EXPECT_EQ(cli("simulate --function hartmann3 --iters 0 --out " + dir_.string()).code, 2);
  EXPECT_EQ(cli("simulate --function hartmann3 --rejected all --out " + dir_.string()).code, 2);
  EXPECT_EQ(cli("populate --function hartmann3 --method meta_po_r_t --out " + dir_.string()).code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(CliTest, MissingFilesExitThree) {
  EXPECT_EQ(cli("inspect --model " + (dir_ / "none.mpo.json").string()).code, 3);
  EXPECT_EQ(cli("replay --record " + (dir_ / "none.json").string()).code, 3);
}

TEST_F(CliTest, SimulateWritesDeterministicCsv) {
  const std::string common =
      "simulate --function hartmann3 --methods random,no_transfer_o --iters 3 --users 2 --population-users 1 --seed 4 " +
      kFast + " --plot";
  const Result a = cli(common + " --out " + (dir_ / "a").string());
  const Result b = cli(common + " --out " + (dir_ / "b").string());
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.rfind("method,final_mean_regret", 0), 0u);
  EXPECT_EQ(slurp(dir_ / "a" / "summary.csv"), slurp(dir_ / "b" / "summary.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "final.csv"), a.out);
  std::size_t traces = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a" / "traces")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / "traces" / e.path().filename()));
    ++traces;
  }
  EXPECT_EQ(traces, 4u);
  EXPECT_NE(slurp(dir_ / "a" / "regret.svg").find("<svg"), std::string::npos);
}

TEST_F(CliTest, PopulateInspectAndReplay) {
  const fs::path gallery = dir_ / "gallery";
  const Result pop = cli("populate --function hartmann3 --users 2 --iters 3 --seed 1 --theme demo --created-at "
                         "2026-04-04T00:00:00Z --out " + gallery.string() + " " + kFast);
  ASSERT_EQ(pop.code, 0);
  EXPECT_EQ(std::count(pop.out.begin(), pop.out.end(), '\n'), 2);
  const auto files = model_files(gallery);
  ASSERT_EQ(files.size(), 2u);
  // same flags, same bytes
  const Result again = cli("populate --function hartmann3 --users 2 --iters 3 --seed 1 --theme demo --created-at "
                           "2026-04-04T00:00:00Z --out " + (dir_ / "g2").string() + " " + kFast);
  EXPECT_EQ(again.out, pop.out);
  for (const auto& f : files) EXPECT_EQ(slurp(f), slurp(dir_ / "g2" / f.filename()));

  const Result ins = cli("inspect --model " + files[0].string());
  ASSERT_EQ(ins.code, 0);
  EXPECT_NE(ins.out.find("theme: demo"), std::string::npos);
  EXPECT_NE(ins.out.find("plane_strategy: two_step"), std::string::npos);
  EXPECT_NE(ins.out.find("taf_r_weight: 1\n"), std::string::npos);

  // a meta session on the gallery, exported and replayed
  const LoadedGallery g = load_gallery(gallery, 3);
  SessionConfig c;
  c.dimension = 3;
  c.method = Method::meta_po_r_t;
  c.maximizer = {10, 20};
  c.fit.restarts = 1;
  c.refit_restarts = 1;
  c.max_iterations = 3;
  c.gallery_ref = "models:" + g.entries[0].id + "," + g.entries[1].id;
  auto [st, plane] = start_session(c, g.gallery);
  submit_selection(st, 4, false);
  submit_selection(st, 9, false);
  const fs::path record = dir_ / "session.json";
  std::ofstream(record) << to_json(export_session(st, "demo"));
  const Result rep = cli("replay --record " + record.string() + " --gallery-dir " + gallery.string() + " --out " +
                         (dir_ / "replayed.json").string());
  EXPECT_EQ(rep.code, 0) << rep.out;
  EXPECT_EQ(rep.out.rfind("replay identical: 3 planes", 0), 0u) << rep.out;
  EXPECT_EQ(slurp(dir_ / "replayed.json"), slurp(record));
  EXPECT_EQ(cli("replay --record " + record.string()).code, 2);  // meta needs the gallery
  const Result ins2 = cli("inspect --model " + files[0].string() + " --session " + record.string());
  EXPECT_EQ(ins2.code, 0);
  EXPECT_NE(ins2.out.find("taf_r_weight: "), std::string::npos);

  // tampered plane: replay reports divergence
  std::string text = slurp(record);
  SessionRecord rec = parse_session_record(text);
  rec.planes[1] = build_plane(rec.planes[1].center, rec.planes[1].corner2, rec.planes[1].corner1);
  std::ofstream(dir_ / "tampered.json") << to_json(rec);
  const Result bad = cli("replay --record " + (dir_ / "tampered.json").string() + " --gallery-dir " + gallery.string());
  EXPECT_EQ(bad.code, 3);
  EXPECT_EQ(bad.out, "replay diverged at plane 2\n");
}
