#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "amd/config.hpp"
#include "amd/evaluation.hpp"
#include "amd/evolution.hpp"
#include "amd/oracle.hpp"
#include "amd/proposers.hpp"

namespace {

using namespace amd;

enum Exit : int { kOk = 0, kFailed = 1, kConfig = 2, kUnavailable = 3, kInterrupted = 4 };

std::atomic<bool> g_interrupt{false};

extern "C" void on_sigint(int) { g_interrupt.store(true); }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cfg::ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Accepts a bare setting object or a run config holding "setting".
mech::SettingSpec load_setting(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw cfg::ConfigError(path + ": " + e.what());
  }
  const auto base = std::filesystem::path(path).parent_path().string();
  try {
    if (j.contains("kind")) return mech::setting_from_json(j, base);
    if (j.contains("setting")) return mech::setting_from_json(j.at("setting"), base);
  } catch (const std::exception& e) {
    throw cfg::ConfigError(path + ": " + e.what());
  }
  throw cfg::ConfigError(path + ": expected a setting object or a config with 'setting'");
}

dsl::HeuristicProgram load_heuristic(const std::string& path, const mech::SettingSpec& setting) {
  try {
    return dsl::parse(read_text(path), mech::signature_for(setting));
  } catch (const dsl::ParseError& e) {
    throw cfg::ConfigError(path + ": " + e.what());
  }
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

// ---- run / distill

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  std::optional<std::string> resume;
  std::optional<std::size_t> max_iterations;
};

int execute_run(cfg::RunConfig config, const RunOverrides& o) {
  if (o.seed) config.seed = o.seed;
  if (o.workers) config.workers = *o.workers;
  if (o.out) config.output_dir = *o.out;
  if (o.resume) config.resume = *o.resume;
  if (o.max_iterations) config.evolution.max_iterations = *o.max_iterations;
  config.validate();
  if (!config.seed) {
    config.seed = fresh_seed();
    std::cerr << "seed: " << *config.seed << "\n";
  }

  const eval::EvalOptions eo{config.n_samples, config.eval_seed, false};
  const eval::Evaluator evaluator(config.settings, eo);
  std::unique_ptr<prop::Proposer> proposer;
  if (config.proposer == "llm") {
    try {
      auto templates =
          prop::PromptTemplates::load(config.resolved_prompts_dir(), config.strategies);
      proposer = std::make_unique<prop::LlmProposer>(config.llm, config.settings.front(),
                                                     std::move(templates));
    } catch (const std::exception& e) {
      throw cfg::ConfigError(e.what());
    }
  } else {
    proposer = std::make_unique<prop::SymbolicProposer>(
        evaluator.signature(), mech::bound_marginal(config.settings.front()) != nullptr);
  }

  evo::ProgramDatabase db(config.evolution);
  evo::RunOptions ro;
  ro.seed = *config.seed;
  ro.workers = config.workers;
  ro.out_dir = config.output_dir;
  ro.checkpoint_every = config.checkpoint_every;
  ro.interrupt = &g_interrupt;
  evo::EvolutionRun run(db, evaluator, *proposer, ro);
  if (config.resume) {
    run.resume(*config.resume);
  } else {
    run.seed_program(config.seed_program.value_or(evo::default_seed_program(evaluator.signature())));
  }
  std::filesystem::create_directories(config.output_dir);
  write_text(std::filesystem::path(config.output_dir) / "config.json", config.to_json().dump(2) + "\n");

  std::signal(SIGINT, on_sigint);
  const auto report = run.run();
  std::signal(SIGINT, SIG_DFL);

  auto summary = report.summary();
  summary["seed"] = *config.seed;
  summary["duplicates"] = db.duplicates();
  summary["programs"] = db.programs().size();
  const std::filesystem::path out(config.output_dir);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  if (report.best) write_text(out / "best.txt", report.best->source + "\n");
  std::cout << summary.dump(2) << "\n";
  if (report.proposer_unavailable) return kUnavailable;
  if (report.interrupted) return kInterrupted;
  return kOk;
}

// ---- bench

struct BenchRow {
  std::string name;
  double measured;
  double reference;
  double lo;
  double hi;
};

int print_bench(const std::string& title, const std::vector<BenchRow>& rows) {
  std::cout << title << "\n";
  std::cout << std::left << std::setw(34) << "baseline" << std::right << std::setw(10) << "measured"
            << std::setw(10) << "reference" << std::setw(20) << "accept" << "  result\n";
  bool all = true;
  for (const auto& r : rows) {
    const bool ok = r.measured >= r.lo && r.measured <= r.hi;
    all = all && ok;
    std::ostringstream range;
    range << std::fixed << std::setprecision(4) << "[" << r.lo << ", " << r.hi << "]";
    std::cout << std::left << std::setw(34) << r.name << std::right << std::fixed
              << std::setprecision(4) << std::setw(10) << r.measured << std::setw(10) << r.reference
              << std::setw(20) << range.str() << "  " << (ok ? "PASS" : "FAIL") << "\n";
  }
  return all ? kOk : kFailed;
}

int cmd_bench(const std::string& table, std::optional<std::uint64_t> seed_opt) {
  const std::uint64_t seed = seed_opt.value_or(fresh_seed());
  std::cout << "seed: " << seed << "\n";
  if (table == "table1") {
    mech::SettingSpec s = mech::VcgRedistribution{};
    const auto cavallo = dsl::parse("def heuristic(others_bids): return 0.5 * min(others_bids)",
                                    mech::signature_for(s));
    const auto r = eval::score(cavallo, s, {3000, seed, false});
    return print_bench("Expected total redistribution, n=4, m=2, U[0,1], 3000 samples",
                       {{"Cavallo 0.5*min(others_bids)", r.score, 0.4935, 0.48, 0.52}});
  }
  if (table == "table2") {
    mech::SettingSpec grid = mech::SingleItemRevenue{2, dist::correlated_grid(), mech::kDefaultEpsilon};
    const auto sigmoid = dsl::parse(
        "def heuristic(bids):\n"
        "  threshold = 0.5\n"
        "  a1 = sigmoid(10 * (bids[0] - threshold))\n"
        "  a2 = sigmoid(10 * (bids[1] - threshold))\n"
        "  return [a1, a2, 1 - max(a1, a2)]\n",
        mech::signature_for(grid));
    const auto rs = eval::score(sigmoid, grid, {3000, seed, false});
    const auto ri = eval::score_myerson(grid, true, {3000, seed, false});
    mech::SettingSpec uni = mech::RediscoveryPerBidder{};
    const auto vv = dsl::parse("def heuristic(v): return v - (1 - cdf(v)) / pdf(v)",
                               mech::signature_for(uni));
    const auto rv = eval::score(vv, uni, {100000, seed, false});
    return print_bench("Expected revenue, 2 bidders",
                       {{"grid: sigmoid threshold 0.5", rs.score, 0.3857, 0.3657, 0.4057},
                        {"grid: Myerson with ironing", ri.score, 0.3857, 0.3657, 0.4057},
                        {"U[0,1]: virtual valuation (5/12)", rv.score, 5.0 / 12.0, 5.0 / 12.0 - 0.01,
                         5.0 / 12.0 + 0.01}});
  }
  throw cfg::ConfigError("bench table must be table1 or table2");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automated mechanism design by evolving sandboxed heuristic programs"};
  app.require_subcommand(1);
  app.footer("\n" + cfg::key_help());

  std::string config_path;
  RunOverrides ov;
  auto* run = app.add_subcommand("run", "evolve heuristics for a config");
  run->add_option("--config", config_path, "run config (JSON)")->required();
  run->add_option("--seed", ov.seed, "override the top-level seed");
  run->add_option("--workers", ov.workers, "concurrent workers (1 = reproducible)");
  run->add_option("--out", ov.out, "output directory");
  run->add_option("--resume", ov.resume, "continue the run stored in this directory");
  run->add_option("--max-iterations", ov.max_iterations, "override evolution.max_iterations");

  std::string setting_path;
  std::string heuristic_path;
  std::size_t samples = 0;
  std::uint64_t eval_seed = 0;
  bool serial = false;
  std::string trace_path;
  auto* ev = app.add_subcommand("eval", "score one heuristic under a setting");
  ev->add_option("--setting,--config", setting_path, "setting or config JSON")->required();
  ev->add_option("--heuristic", heuristic_path, "heuristic source file")->required();
  ev->add_option("--samples", samples, "Monte Carlo samples (0 = setting default)");
  ev->add_option("--seed", eval_seed, "sample seed");
  ev->add_flag("--serial", serial, "use the serial reference path");
  ev->add_option("--trace", trace_path, "write per-sample components as CSV");

  double step = 0.05;
  double dev_step = 0.05;
  std::string report_path;
  auto* ver = app.add_subcommand("verify", "grid-check SP, IR, feasibility and WBB of the fixed mechanism");
  ver->add_option("--setting,--config", setting_path, "setting or config JSON")->required();
  ver->add_option("--heuristic", heuristic_path, "heuristic source file")->required();
  ver->add_option("--step", step, "profile grid step");
  ver->add_option("--deviation-step", dev_step, "deviation grid step");
  ver->add_option("--out", report_path, "write the report JSON here");

  std::string table;
  std::optional<std::uint64_t> bench_seed;
  auto* bench = app.add_subcommand("bench", "reproduce the baseline tables");
  bench->add_option("table", table, "table1 or table2")->required();
  bench->add_option("--seed", bench_seed, "sample seed (default: fresh)");

  std::string goal_path;
  std::string metric;
  auto* distill = app.add_subcommand("distill", "evolve a heuristic that matches a goal table");
  distill->add_option("--config", config_path, "run config with a distillation setting");
  distill->add_option("--setting", setting_path, "inner setting (with --goal)");
  distill->add_option("--goal", goal_path, "goal table JSON");
  distill->add_option("--metric", metric, "L1 or L2 (default: goal hint, else L2)");
  distill->add_option("--seed", ov.seed, "top-level seed");
  distill->add_option("--workers", ov.workers, "concurrent workers");
  distill->add_option("--out", ov.out, "output directory");
  distill->add_option("--resume", ov.resume, "continue the run stored in this directory");
  distill->add_option("--max-iterations", ov.max_iterations, "iteration budget");

  std::size_t points = 21;
  std::string table_out;
  auto* tab = app.add_subcommand("tabulate", "tabulate a heuristic on a grid as a goal table");
  tab->add_option("--setting", setting_path, "setting whose heuristic input is tabulated")->required();
  tab->add_option("--heuristic", heuristic_path, "heuristic source file")->required();
  tab->add_option("--points", points, "grid points per axis");
  tab->add_option("--metric", metric, "metric hint stored in the table");
  tab->add_option("--out", table_out, "output JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return execute_run(cfg::RunConfig::load(config_path), ov);

    if (distill->parsed()) {
      cfg::RunConfig config;
      if (!config_path.empty()) {
        config = cfg::RunConfig::load(config_path);
      } else {
        if (setting_path.empty() || goal_path.empty()) {
          throw cfg::ConfigError("distill needs --config, or --setting with --goal");
        }
        nlohmann::json j = {{"setting",
                             {{"kind", "distillation"},
                              {"inner", mech::setting_to_json(load_setting(setting_path))},
                              {"goal_file", std::filesystem::absolute(goal_path).string()}}},
                            {"evolution", {{"reset_clock", "iterations"}, {"reset_period", 100}}}};
        if (!metric.empty()) j["setting"]["metric"] = metric;
        config = cfg::RunConfig::from_json(j);
      }
      if (!std::holds_alternative<mech::Distillation>(config.settings.front())) {
        throw cfg::ConfigError("distill needs a distillation setting");
      }
      return execute_run(config, ov);
    }

    if (ev->parsed()) {
      const auto setting = load_setting(setting_path);
      const auto program = load_heuristic(heuristic_path, setting);
      const auto report = eval::score(program, setting, {samples, eval_seed, !trace_path.empty()},
                                      serial ? eval::Mode::Serial : eval::Mode::Parallel);
      if (!trace_path.empty()) eval::write_trace_csv(report, trace_path);
      std::cout << report.to_json().dump(2) << "\n";
      return report.rejected ? kFailed : kOk;
    }

    if (ver->parsed()) {
      const auto setting = load_setting(setting_path);
      const auto program = load_heuristic(heuristic_path, setting);
      oracle::CriteriaReport report;
      try {
        report = oracle::verify_program(program, setting, step, dev_step);
      } catch (const dsl::EvalError& e) {
        std::cerr << "heuristic fails on the grid: " << e.what() << "\n";
        return kFailed;
      }
      auto j = report.to_json();
      j["passes"] = report.passes();
      if (!report_path.empty()) write_text(report_path, j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
      return report.passes() ? kOk : kFailed;
    }

    if (bench->parsed()) return cmd_bench(table, bench_seed);

    if (tab->parsed()) {
      const auto setting = load_setting(setting_path);
      const auto program = load_heuristic(heuristic_path, setting);
      const auto sig = mech::signature_for(setting);
      if (sig.vector_output()) throw cfg::ConfigError("tabulate needs a scalar-output heuristic");
      const auto* marginal = mech::bound_marginal(setting);
      auto goal = mech::GoalFunction::tabulate(
          sig.arity, points, 0.0, 1.0, [&](std::span<const double> x) {
            return sig.vector_input() ? dsl::eval_scalar(program, x, marginal)
                                      : dsl::eval_scalar(program, x[0], marginal);
          });
      if (!metric.empty()) {
        goal = mech::GoalFunction(goal.grid(), goal.values(), mech::metric_from_string(metric));
      }
      goal.save(table_out);
      std::cout << "wrote " << table_out << " (" << goal.values().size() << " values)\n";
      return kOk;
    }
  } catch (const cfg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const mech::SettingError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const prop::ProposerUnavailable& e) {
    std::cerr << "proposer unavailable: " << e.what() << "\n";
    return kUnavailable;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}
