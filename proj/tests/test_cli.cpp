#include <gtest/gtest.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(HTYPE_CLI_PATH) + "' " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t got = 0;
  while ((got = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("htype_cli_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d / name;
}

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

json strip_timestamp(json j) {
  j.erase("timestamp");
  return j;
}

}  // namespace

TEST(Cli, IdentitiesOnGroupPass) {
  const CliRun r = run("check --model group:2,1 --suite identities");
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, CollinearSitesAreRankDeficient) {
  const CliRun r = run("fit-c1 --models hopf-s3@1 hopf-s3@2");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("rank-deficient"), std::string::npos) << r.out;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("check --model group:2,1 --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("invariants --model nonsense").code, 2);
  EXPECT_EQ(run("clifford --n 3 --m 1").code, 2);
  EXPECT_EQ(run("heat-kernel --at 1,2").code, 2);
}

TEST(Cli, UnknownConfigKeyExitsTwo) {
  const fs::path cfg = scratch("bad.cfg");
  std::ofstream(cfg) << "model = hopf-s3\nbogus = 1\n";
  const CliRun r = run("invariants --config " + cfg.string());
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("bogus"), std::string::npos);
}

TEST(Cli, ReportLayout) {
  const fs::path out = scratch("inv.json");
  ASSERT_EQ(run("invariants --model qhopf-s7 --json " + out.string()).code, 0);
  const json j = load(out);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["tool"], "htype");
  EXPECT_EQ(j["command"], "invariants");
  EXPECT_EQ(j["config"]["model"], "qhopf-s7");
  EXPECT_FALSE(j["config"].contains("json"));
  EXPECT_DOUBLE_EQ(j["result"]["kappa_h"].get<double>(), 48.0);
  EXPECT_DOUBLE_EQ(j["result"]["tau_v"].get<double>(), -48.0);
  EXPECT_DOUBLE_EQ(j["result"]["kappa_v"].get<double>(), 4.0);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_TRUE(j["timestamp"].contains("utc"));
  EXPECT_TRUE(j.contains("conventions"));
  // no temporary left behind by the atomic write
  for (const auto& e : fs::directory_iterator(out.parent_path()))
    EXPECT_EQ(e.path().string().find(".tmp."), std::string::npos) << e.path();
}

TEST(Cli, JsonToStdout) {
  const CliRun r = run("heat-kernel --n 2 --m 1 --t 1 --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["result"]["values"][0]["value"]["value"].get<double>() * 32.0, 1.0, 1e-10);
}

TEST(Cli, DeterministicModuloTimestamp) {
  const std::string args = "ball-volume --model hopf-s3 --radii 0.1,0.2 --budget 4000 --seed 5 --json ";
  const fs::path a = scratch("a.json"), b = scratch("b.json"), c = scratch("c.json");
  ASSERT_EQ(run(args + a.string(), "HTYPE_THREADS=1").code, 0);
  ASSERT_EQ(run(args + b.string(), "HTYPE_THREADS=1").code, 0);
  ASSERT_EQ(run(args + c.string(), "HTYPE_THREADS=3").code, 0);
  EXPECT_EQ(strip_timestamp(load(a)).dump(), strip_timestamp(load(b)).dump());
  EXPECT_EQ(strip_timestamp(load(a)).dump(), strip_timestamp(load(c)).dump());
}

TEST(Cli, ConfigRoundTrip) {
  const fs::path cfg = scratch("vol.cfg"), a = scratch("first.json"), b = scratch("second.json"), csv = scratch("v.csv");
  ASSERT_EQ(run("ball-volume --model hopf-s3 --radii 0.1:0.2:2 --budget 3000 --seed 9 --save-config " + cfg.string() +
                " --csv " + csv.string() + " --json " + a.string())
                .code,
            0);
  ASSERT_EQ(run("ball-volume --config " + cfg.string() + " --json " + b.string()).code, 0);
  EXPECT_EQ(strip_timestamp(load(a)).dump(), strip_timestamp(load(b)).dump());

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "r,volume,stderr,normalized");

  // a flag on the command line wins over the file
  const fs::path c = scratch("third.json");
  ASSERT_EQ(run("ball-volume --config " + cfg.string() + " --seed 10 --json " + c.string()).code, 0);
  EXPECT_EQ(load(c)["config"]["seed"], 10);
}

TEST(Cli, FailingCheckExitsOne) {
  // an impossibly tight tolerance on a curved model must fail the run
  const CliRun r = run("taylor-check --model hopf-s3 --tol 1e-30 --samples 2");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("failing checks"), std::string::npos);
}
