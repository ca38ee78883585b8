#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

CliResult amd_cli(const std::string& args, const amd::test::TempDir& dir, const std::string& env = "") {
  const auto out = dir.path() / "stdout.txt";
  const auto err = dir.path() / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(AMD_CLI_PATH) + "' " + args +
                          " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string configs() { return (amd::test::source_dir() / "configs").string(); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help lists subcommands and config keys") {
    amd::test::TempDir dir("cli_help");
    const auto r = amd_cli("--help", dir);
    CHECK(r.exit_code == 0);
    for (const char* word : {"run", "eval", "verify", "bench", "distill", "tabulate", "evolution.reset_clock"}) {
      CHECK(r.out.find(word) != std::string::npos);
    }
    CHECK(amd_cli("", dir).exit_code != 0);
  }

  TEST_CASE("bench table1") {
    amd::test::TempDir dir("cli_bench");
    const auto r = amd_cli("bench table1 --seed 1", dir);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    CHECK(r.out.find("seed: 1") != std::string::npos);
    CHECK(amd_cli("bench table9", dir).exit_code == 2);
  }

  TEST_CASE("eval prints a JSON report and a trace") {
    amd::test::TempDir dir("cli_eval");
    const auto trace = dir.path() / "trace.csv";
    const std::string base = "eval --setting " + configs() + "/setting_rediscovery_uniform.json --heuristic " +
                             configs() + "/heuristics/virtual_value.py --samples 2000 --seed 4";
    const auto r = amd_cli(base + " --trace " + trace.string(), dir);
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("score").get<double>() == doctest::Approx(5.0 / 12.0).epsilon(0.05));
    CHECK(std::filesystem::exists(trace));
    const auto serial = amd_cli(base + " --serial", dir);
    REQUIRE(serial.exit_code == 0);
    CHECK(nlohmann::json::parse(serial.out).at("score") == j.at("score"));
  }

  TEST_CASE("verify exit codes") {
    amd::test::TempDir dir("cli_verify");
    const auto report = dir.path() / "report.json";
    const auto ok = amd_cli("verify --setting " + configs() + "/setting_redistribution_n4.json --heuristic " +
                                configs() + "/heuristics/cavallo.py --step 0.25 --deviation-step 0.25 --out " +
                                report.string(),
                            dir);
    CHECK(ok.exit_code == 0);
    CHECK(nlohmann::json::parse(slurp(report)).at("passes") == true);
    write(dir.path() / "bad.py", "def heuristic(v):\n    return log(v - 2)\n");
    const auto bad = amd_cli("verify --setting " + configs() + "/setting_rediscovery_uniform.json --heuristic " +
                                 (dir.path() / "bad.py").string(),
                             dir);
    CHECK(bad.exit_code == 1);
    write(dir.path() / "syntax.py", "def heuristic(v): return (");
    CHECK(amd_cli("verify --setting " + configs() + "/setting_rediscovery_uniform.json --heuristic " +
                      (dir.path() / "syntax.py").string(),
                  dir)
              .exit_code != 0);
  }

  TEST_CASE("run writes its artifacts") {
    amd::test::TempDir dir("cli_run");
    const auto out = dir.path() / "run";
    const auto r = amd_cli("run --config " + configs() + "/rediscovery.json --max-iterations 15 --seed 2 --out " +
                               out.string(),
                           dir);
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"config.json", "summary.json", "best.txt", "database.jsonl", "trace.csv", "state.json"}) {
      CHECK(std::filesystem::exists(out / f));
    }
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary.at("iterations") == 15);
    CHECK(summary.at("seed") == 2);
    const auto resumed = amd_cli("run --config " + configs() + "/rediscovery.json --max-iterations 20 --seed 2 " +
                                     "--out " + out.string() + " --resume " + out.string(),
                                 dir);
    REQUIRE(resumed.exit_code == 0);
    CHECK(nlohmann::json::parse(slurp(out / "summary.json")).at("iterations") == 20);
  }

  TEST_CASE("a fresh seed is drawn and printed") {
    amd::test::TempDir dir("cli_seed");
    write(dir.path() / "c.json", R"({"setting": {"kind": "rediscovery"}, "evaluation": {"n_samples": 200},
      "evolution": {"max_iterations": 3}})");
    const auto r = amd_cli("run --config " + (dir.path() / "c.json").string() + " --out " +
                               (dir.path() / "o").string(),
                           dir);
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("seed") != std::string::npos);
  }

  TEST_CASE("config errors exit 2") {
    amd::test::TempDir dir("cli_cfg");
    write(dir.path() / "typo.json", R"({"setting": {"kind": "rediscovery"}, "evolutin": {}})");
    const auto typo = amd_cli("run --config " + (dir.path() / "typo.json").string(), dir);
    CHECK(typo.exit_code == 2);
    CHECK(typo.err.find("evolutin") != std::string::npos);
    CHECK(amd_cli("run --config " + (dir.path() / "nope.json").string(), dir).exit_code == 2);
  }

  TEST_CASE("llm proposer without a key exits 2 naming the variable") {
    amd::test::TempDir dir("cli_key");
    write(dir.path() / "llm.json", R"({"setting": {"kind": "rediscovery"},
      "proposer": {"kind": "llm", "llm": {"base_url": "http://127.0.0.1:1/v1", "model": "m",
                                           "api_key_env": "AMD_CLI_TEST_KEY"}}})");
    const auto r = amd_cli("run --seed 1 --config " + (dir.path() / "llm.json").string(), dir,
                           "env -u AMD_CLI_TEST_KEY");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("AMD_CLI_TEST_KEY") != std::string::npos);
  }

  TEST_CASE("unreachable llm endpoint exits 3") {
    amd::test::TempDir dir("cli_down");
    write(dir.path() / "llm.json", R"({"setting": {"kind": "rediscovery"}, "evaluation": {"n_samples": 100},
      "proposer": {"kind": "llm", "llm": {"base_url": "http://127.0.0.1:1/v1", "model": "m",
                                           "api_key_env": "AMD_CLI_TEST_KEY", "retries": 0,
                                           "timeout_seconds": 2}}})");
    const auto r = amd_cli("run --seed 1 --out " + (dir.path() / "o").string() + " --config " +
                               (dir.path() / "llm.json").string(),
                           dir, "AMD_CLI_TEST_KEY=k");
    CHECK(r.exit_code == 3);
    CHECK(std::filesystem::exists(dir.path() / "o" / "summary.json"));
  }

  TEST_CASE("tabulate then distill") {
    amd::test::TempDir dir("cli_distill");
    const auto goal = dir.path() / "goal.json";
    write(dir.path() / "inner.json", R"({"kind": "vcg_redistribution", "n_bidders": 3, "n_items": 1})");
    write(dir.path() / "h.py", "def heuristic(others_bids):\n    return 0.25 * max(others_bids)\n");
    const auto t = amd_cli("tabulate --setting " + (dir.path() / "inner.json").string() + " --heuristic " +
                               (dir.path() / "h.py").string() + " --points 6 --metric L1 --out " + goal.string(),
                           dir);
    REQUIRE(t.exit_code == 0);
    CHECK(t.out.find("36 values") != std::string::npos);
    const auto table = nlohmann::json::parse(slurp(goal));
    CHECK(table.at("metric_hint") == "L1");
    const auto d = amd_cli("distill --setting " + (dir.path() / "inner.json").string() + " --goal " +
                               goal.string() + " --seed 1 --max-iterations 10 --out " + (dir.path() / "o").string(),
                           dir);
    REQUIRE(d.exit_code == 0);
    const auto summary = nlohmann::json::parse(slurp(dir.path() / "o" / "summary.json"));
    CHECK(summary.at("iterations") == 10);
    CHECK(amd_cli("distill --config " + configs() + "/rediscovery.json", dir).exit_code == 2);
  }
}
