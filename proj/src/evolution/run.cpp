#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "amd/distributions.hpp"
#include "amd/evolution.hpp"

namespace amd::evo {

namespace {

constexpr std::uint64_t kProposerStream = 0x70726f706f736572ULL;

std::string format_double(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string category(const std::string& reason) {
  return reason.substr(0, reason.find(':'));
}

}  // namespace

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "iteration,best_so_far,best_last5,score\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_double(r.best_so_far) << ','
        << (r.best_last5 ? format_double(*r.best_last5) : "") << ','
        << (r.score ? format_double(*r.score) : "") << '\n';
  }
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::vector<TraceRow> rows;
  std::string line;
  std::getline(in, line);
  if (line.rfind("iteration,", 0) != 0) throw std::runtime_error("trace: missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    while (f.size() < 4) f.emplace_back();
    TraceRow r;
    r.iteration = std::stoull(f[0]);
    r.best_so_far = std::stod(f[1]);
    if (!f[2].empty()) r.best_last5 = std::stod(f[2]);
    if (!f[3].empty()) r.score = std::stod(f[3]);
    rows.push_back(r);
  }
  return rows;
}

std::string default_seed_program(const dsl::HeuristicSignature& signature) {
  const std::string param(signature.default_param());
  if (!signature.vector_output()) return "def heuristic(" + param + "): return 0";
  std::string vec = "[";
  for (std::size_t k = 0; k < signature.arity; ++k) vec += "0, ";
  return "def heuristic(" + param + "): return " + vec + "1]";
}

nlohmann::json RunReport::summary() const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["best_score"] = best ? nlohmann::json(best->score) : nlohmann::json(nullptr);
  j["best_source"] = best ? nlohmann::json(best->source) : nlohmann::json(nullptr);
  j["rejections"] = rejections;
  std::size_t total = 0;
  for (const auto& [k, v] : rejections) total += v;
  j["rejected_total"] = total;
  j["interrupted"] = interrupted;
  j["proposer_unavailable"] = proposer_unavailable;
  j["stop_reason"] = stop_reason;
  return j;
}

struct EvolutionRun::Outcome {
  std::optional<dsl::HeuristicProgram> program;
  double score = eval::kRejectedScore;
  std::string rejection;
  std::optional<std::string> unavailable;
};

EvolutionRun::EvolutionRun(ProgramDatabase& db, const eval::Evaluator& evaluator,
                           prop::Proposer& proposer, RunOptions options)
    : db_(db), evaluator_(evaluator), proposer_(proposer), options_(std::move(options)) {
  if (options_.workers == 0) throw std::invalid_argument("workers must be >= 1");
}

void EvolutionRun::seed_program(const std::string& source) {
  const auto program = dsl::parse(source, evaluator_.signature());
  const auto report = evaluator_(program);
  if (report.rejected) {
    throw std::invalid_argument("seed program is rejected: " + report.rejection_reason);
  }
  for (std::size_t i = 0; i < db_.config().num_islands; ++i) {
    db_.register_program(program, report.score, 0, {}, std::nullopt, i);
  }
}

void EvolutionRun::checkpoint() const {
  if (!options_.out_dir) return;
  const auto& dir = *options_.out_dir;
  std::filesystem::create_directories(dir);
  std::ostringstream db;
  db_.save_jsonl(db);
  write_atomic(dir / "database.jsonl", db.str());
  std::ostringstream trace;
  write_trace_csv(trace, state_.trace);
  write_atomic(dir / "trace.csv", trace.str());
  nlohmann::json st = {{"iteration", state_.iteration},
                       {"last_reset_iteration", state_.last_reset_iteration},
                       {"total_registered", db_.total_registered()},
                       {"next_id", db_.next_id()},
                       {"duplicates", db_.duplicates()},
                       {"rejections", state_.rejections},
                       {"seed", options_.seed}};
  write_atomic(dir / "state.json", st.dump(2) + "\n");
}

void EvolutionRun::resume(const std::filesystem::path& dir) {
  std::ifstream sf(dir / "state.json");
  if (!sf) throw std::runtime_error("resume: cannot read " + (dir / "state.json").string());
  const auto st = nlohmann::json::parse(sf);
  if (st.at("seed").get<std::uint64_t>() != options_.seed) {
    throw std::invalid_argument("resume: state was written with seed " +
                                std::to_string(st.at("seed").get<std::uint64_t>()) +
                                ", current seed is " + std::to_string(options_.seed));
  }
  db_.load_jsonl(dir / "database.jsonl", evaluator_.signature());
  db_.set_counters(st.at("total_registered").get<std::size_t>(), st.at("next_id").get<std::size_t>(),
                   st.at("duplicates").get<std::size_t>());
  std::ifstream tf(dir / "trace.csv");
  if (!tf) throw std::runtime_error("resume: cannot read trace.csv");
  state_.trace = read_trace_csv(tf);
  state_.iteration = st.at("iteration").get<std::size_t>();
  state_.last_reset_iteration = st.at("last_reset_iteration").get<std::size_t>();
  state_.rejections = st.at("rejections").get<std::map<std::string, std::size_t>>();
  if (state_.trace.size() != state_.iteration) {
    throw std::runtime_error("resume: trace has " + std::to_string(state_.trace.size()) +
                             " rows but state is at iteration " + std::to_string(state_.iteration));
  }
}

EvolutionRun::Outcome EvolutionRun::attempt(std::size_t iteration,
                                            const std::vector<ScoredProgram>& parents,
                                            std::optional<int> strategy) {
  Outcome out;
  prop::ProposalRequest req;
  for (const auto& p : parents) req.parents.push_back({p.source, p.score});
  req.strategy_id = strategy;
  req.version = parents.size();
  prop::Proposal proposal;
  try {
    proposal = proposer_.propose(req, dist::derive_seed(options_.seed ^ kProposerStream, iteration));
  } catch (const prop::ProposerUnavailable& e) {
    out.unavailable = e.what();
    return out;
  } catch (const std::exception& e) {
    out.rejection = std::string("proposer: ") + e.what();
    return out;
  }
  if (!proposal.ok()) {
    out.rejection = "proposer_" + proposal.rejection;
    return out;
  }
  try {
    auto program = dsl::parse(proposal.source, evaluator_.signature());
    const auto report = evaluator_(program);
    if (report.rejected || !std::isfinite(report.score)) {
      out.rejection = "eval_" + report.rejection_reason;
      return out;
    }
    out.program = std::move(program);
    out.score = report.score;
  } catch (const dsl::ParseError& e) {
    out.rejection = "parse_" + std::string(dsl::to_string(e.kind())) + ": " + e.message();
  }
  return out;
}

RunReport EvolutionRun::run() {
  const auto& cfg = db_.config();
  RunReport report;
  auto reset_clock = std::chrono::steady_clock::now();
  double best_so_far = state_.trace.empty() ? eval::kRejectedScore : state_.trace.back().best_so_far;
  if (const auto b = db_.best()) best_so_far = std::max(best_so_far, b->score);
  std::size_t done_here = 0;

  auto stop = [&]() -> bool {
    if (state_.iteration >= cfg.max_iterations) {
      report.stop_reason = "max_iterations";
      return true;
    }
    if (cfg.target_score && best_so_far >= *cfg.target_score) {
      report.stop_reason = "target_score";
      return true;
    }
    if (options_.interrupt && options_.interrupt->load()) {
      report.stop_reason = "interrupted";
      report.interrupted = true;
      return true;
    }
    if (options_.stop_after && done_here >= *options_.stop_after) {
      report.stop_reason = "stop_after";
      return true;
    }
    return false;
  };

  struct Job {
    std::size_t iteration;
    std::vector<ScoredProgram> parents;
    std::optional<int> strategy;
  };

  while (!stop()) {
    std::size_t round = std::min(options_.workers, cfg.max_iterations - state_.iteration);
    if (options_.stop_after) round = std::min(round, *options_.stop_after - done_here);

    std::vector<Job> jobs;
    for (std::size_t j = 0; j < round; ++j) {
      const std::size_t t = state_.iteration + j;
      std::mt19937_64 rng(dist::derive_seed(options_.seed, t));
      std::vector<std::size_t> live;
      for (std::size_t i = 0; i < cfg.num_islands; ++i) {
        if (db_.island_size(i) > 0) live.push_back(i);
      }
      if (live.empty()) throw EmptyIsland("every island is empty; register a seed program");
      const std::size_t island = live[std::min(
          live.size() - 1, static_cast<std::size_t>(dist::unit_uniform(rng) * static_cast<double>(live.size())))];
      Job job{t, db_.sample_parents(island, cfg.functions_per_prompt, rng), std::nullopt};
      if (cfg.use_strategies) job.strategy = static_cast<int>(t % prop::kStrategyCount) + 1;
      jobs.push_back(std::move(job));
    }

    std::vector<Outcome> outcomes(jobs.size());
    if (jobs.size() == 1) {
      outcomes[0] = attempt(jobs[0].iteration, jobs[0].parents, jobs[0].strategy);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t j = 0; j < jobs.size(); ++j) {
        threads.emplace_back([&, j] {
          outcomes[j] = attempt(jobs[j].iteration, jobs[j].parents, jobs[j].strategy);
        });
      }
      for (auto& th : threads) th.join();
    }

    for (std::size_t j = 0; j < jobs.size(); ++j) {
      auto& o = outcomes[j];
      if (o.unavailable) {
        report.proposer_unavailable = true;
        report.stop_reason = "proposer_unavailable: " + *o.unavailable;
        checkpoint();
        report.best = db_.best();
        report.trace = state_.trace;
        report.iterations = state_.iteration;
        report.rejections = state_.rejections;
        return report;
      }
      const std::size_t t = jobs[j].iteration;
      TraceRow row;
      row.iteration = t;
      if (o.program) {
        std::vector<std::size_t> parent_ids;
        for (const auto& p : jobs[j].parents) parent_ids.push_back(p.id);
        db_.register_program(*o.program, o.score, t, parent_ids, jobs[j].strategy);
        row.score = o.score;
        best_so_far = std::max(best_so_far, o.score);
      } else {
        ++state_.rejections[category(o.rejection)];
      }
      row.best_so_far = best_so_far;
      state_.trace.push_back(row);
      const std::size_t n = state_.trace.size();
      for (std::size_t k = n - std::min<std::size_t>(n, prop::kStrategyCount); k < n; ++k) {
        const auto& s = state_.trace[k].score;
        if (s && (!row.best_last5 || *s > *row.best_last5)) row.best_last5 = *s;
      }
      state_.trace.back().best_last5 = row.best_last5;
      state_.iteration = t + 1;
      ++done_here;

      bool reset = false;
      if (cfg.reset_clock == ResetClock::Iterations) {
        reset = static_cast<double>(state_.iteration - state_.last_reset_iteration) >= cfg.reset_period;
      } else {
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - reset_clock;
        reset = elapsed.count() >= cfg.reset_period;
      }
      if (reset) {
        db_.reset_islands();
        state_.last_reset_iteration = state_.iteration;
        reset_clock = std::chrono::steady_clock::now();
      }
      if (options_.on_iteration) options_.on_iteration(state_.trace.back());
      if (options_.checkpoint_every > 0 && state_.iteration % options_.checkpoint_every == 0) {
        checkpoint();
      }
    }
  }
  checkpoint();
  report.best = db_.best();
  report.trace = state_.trace;
  report.iterations = state_.iteration;
  report.rejections = state_.rejections;
  return report;
}

}  // namespace amd::evo
