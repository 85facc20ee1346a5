// Runs the drfe binary end to end on a small grid.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "drfe/io.hpp"
#include "drfe/run.hpp"

namespace fs = std::filesystem;
using drfe::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "drfe_cli_test";
const std::string kSmall = R"({"theta_cells":6,"omega_cells":6,"torque_cells":5,"runs":8,"horizon":12,"jobs":2})";

struct Result {
  int code;
  std::string err;
};

fs::path fresh(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  fs::create_directories(kRoot);
  return p;
}

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / (name + ".json");
  drfe::write_file(p, text);
  return p;
}

Result run(const std::string& args) {
  const fs::path err = kRoot / "stderr.txt";
  fs::create_directories(kRoot);
  const std::string cmd = std::string(DRFE_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, drfe::read_file(err)};
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST(Cli, FullRunWritesEverything) {
  const fs::path out = fresh("full");
  const auto cfg = write_config("small", kSmall);
  const Result r = run("--config " + cfg.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"run_manifest.json", "worst_case_kl.csv", "policy.json", "trajectories.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_TRUE(fs::exists(out / "traces" / "cell_35_4.csv"));

  const std::string traj = drfe::read_file(out / "trajectories.csv");
  EXPECT_EQ(count_lines(traj), 13u);
  EXPECT_EQ(traj.substr(0, traj.find('\n')), "step,theta_mean,theta_std,omega_mean,omega_std,u_mean,u_std");
  EXPECT_EQ(count_lines(drfe::read_file(out / "worst_case_kl.csv")), 36u * 5u + 1u);

  const json m = json::parse(drfe::read_file(out / "run_manifest.json"));
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("config").at("theta_cells"), 6);
  EXPECT_EQ(m.at("stages").size(), 3u);
  EXPECT_EQ(m.at("stages")[0].at("name"), "solve-inner");
  EXPECT_GE(m.at("stages")[2].at("wall_clock_seconds").get<double>(), 0.0);
  EXPECT_EQ(m.at("input_hashes").at("config"), drfe::run::git_blob_sha1(m.at("config").dump()));
}

TEST(Cli, SameSeedSameBytes) {
  const auto cfg = write_config("small", kSmall);
  const fs::path a = fresh("seed_a"), b = fresh("seed_b"), c = fresh("seed_c");
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 5 --out " + a.string()).code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 5 --jobs 1 --out " + b.string()).code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 6 --out " + c.string()).code, 0);
  EXPECT_EQ(drfe::read_file(a / "trajectories.csv"), drfe::read_file(b / "trajectories.csv"));
  EXPECT_EQ(drfe::read_file(a / "worst_case_kl.csv"), drfe::read_file(b / "worst_case_kl.csv"));
  EXPECT_EQ(drfe::read_file(a / "policy.json"), drfe::read_file(b / "policy.json"));
  EXPECT_NE(drfe::read_file(a / "trajectories.csv"), drfe::read_file(c / "trajectories.csv"));
}

TEST(Cli, StagesChainToTheFullResult) {
  const auto cfg = write_config("small", kSmall);
  const fs::path full = fresh("chain_full"), staged = fresh("chain_staged");
  ASSERT_EQ(run("--config " + cfg.string() + " --out " + full.string()).code, 0);
  const std::string base = "--config " + cfg.string() + " --out " + staged.string();
  ASSERT_EQ(run(base + " --stage solve-inner").code, 0);
  EXPECT_FALSE(fs::exists(staged / "policy.json"));
  ASSERT_EQ(run(base + " --stage synthesize").code, 0);
  ASSERT_EQ(run(base + " --stage simulate").code, 0);
  EXPECT_EQ(drfe::read_file(full / "trajectories.csv"), drfe::read_file(staged / "trajectories.csv"));
  const json m = json::parse(drfe::read_file(staged / "run_manifest.json"));
  EXPECT_TRUE(m.at("input_hashes").contains("policy.json"));
}

TEST(Cli, ZeroRadiusSolvesInstantly) {
  const auto cfg = write_config("small", kSmall);
  const fs::path out = fresh("zero");
  const Result r = run("--config " + cfg.string() + " --stage solve-inner --eta-baseline 0 --eta-omega 0 "
                       "--eta-torque 0 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  // A single record: r = 1 is stationary at once.
  EXPECT_EQ(count_lines(drfe::read_file(out / "traces" / "cell_0_0.csv")), 2u);
  EXPECT_EQ(count_lines(drfe::read_file(out / "traces" / "cell_20_3.csv")), 2u);
}

TEST(Cli, ConfigErrorsExitOneAndWriteNothing) {
  const std::vector<std::string> bad = {
      "{not json",
      R"({"no_such_key": 1})",
      R"({"runs": -3})",
      R"({"runs": 0})",
      R"({"delta0": 2.0})",
      R"({"eta_omega": -0.1})",
      R"({"stage": "everything"})",
      R"({"step_rule": "fast"})",
      R"({"omega_tol": "small"})",
      R"({"theta_cells": 1})",
  };
  for (std::size_t i = 0; i < bad.size(); ++i) {
    const fs::path out = fresh("bad" + std::to_string(i));
    const auto cfg = write_config("bad" + std::to_string(i), bad[i]);
    const Result r = run("--config " + cfg.string() + " --out " + out.string());
    EXPECT_EQ(r.code, 1) << bad[i];
    EXPECT_NE(r.err.find("config error"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(out)) << bad[i];
  }
}

TEST(Cli, FieldLevelMessages) {
  const fs::path out = fresh("field");
  Result r = run("--runs 0 --out " + out.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("runs"), std::string::npos);
  r = run("--delta1 0.5 --out " + out.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("delta1"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, BadFlagsExitOne) {
  EXPECT_EQ(run("--no-such-flag").code, 1);
  EXPECT_EQ(run("--runs many").code, 1);
  EXPECT_EQ(run("--config " + (kRoot / "missing.json").string()).code, 1);
}

TEST(Cli, MissingPrerequisiteIsConfigError) {
  const fs::path out = fresh("prereq");
  const auto cfg = write_config("small", kSmall);
  EXPECT_EQ(run("--config " + cfg.string() + " --stage synthesize --out " + out.string()).code, 1);
  EXPECT_EQ(run("--config " + cfg.string() + " --stage simulate --out " + out.string()).code, 1);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, NumericalFailureExitsTwoWithStageName) {
  const auto cfg = write_config("small", kSmall);
  const fs::path out = fresh("fail");
  ASSERT_EQ(run("--config " + cfg.string() + " --stage solve-inner --out " + out.string()).code, 0);
  std::string kl = drfe::read_file(out / "worst_case_kl.csv");
  const std::size_t second = kl.find('\n') + 1;
  const std::size_t end = kl.find('\n', second);
  kl.replace(second, end - second, "0,0,nan");
  drfe::write_file(out / "worst_case_kl.csv", kl);
  const Result r = run("--config " + cfg.string() + " --stage synthesize --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stage synthesize"), std::string::npos) << r.err;
  const json m = json::parse(drfe::read_file(out / "run_manifest.json"));
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_FALSE(fs::exists(out / "policy.json"));
}

TEST(Cli, GitBlobHashMatchesGit) {
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(drfe::run::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(drfe::run::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
