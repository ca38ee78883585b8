#include <fstream>
#include <set>
#include <sstream>

#include "amd/evolution.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace amd;

namespace {

const dsl::HeuristicSignature kPer = dsl::HeuristicSignature::per_bidder();

dsl::HeuristicProgram per(const std::string& body) {
  return dsl::parse("def heuristic(v): return " + body, kPer);
}

evo::EvolutionConfig small_config() {
  evo::EvolutionConfig c;
  c.num_islands = 4;
  c.reset_clock = evo::ResetClock::Iterations;
  c.reset_period = 50;
  c.max_iterations = 120;
  return c;
}

// Replays a fixed script of sources; throws once the script runs out.
class ScriptedProposer : public prop::Proposer {
 public:
  explicit ScriptedProposer(std::vector<std::string> script, bool unavailable_at_end = false)
      : script_(std::move(script)), unavailable_at_end_(unavailable_at_end) {}
  prop::Proposal propose(const prop::ProposalRequest&, std::uint64_t) override {
    const std::size_t i = calls_++;
    if (i >= script_.size()) {
      if (unavailable_at_end_) throw prop::ProposerUnavailable("script exhausted");
      return prop::Proposal::reject("script exhausted");
    }
    return prop::Proposal::accept(script_[i]);
  }
  std::string name() const override { return "scripted"; }

 private:
  std::vector<std::string> script_;
  bool unavailable_at_end_;
  std::size_t calls_ = 0;
};

evo::RunReport run_symbolic(const evo::EvolutionConfig& cfg, std::uint64_t seed, std::size_t workers,
                            const std::optional<std::filesystem::path>& out = std::nullopt,
                            std::optional<std::size_t> stop_after = std::nullopt,
                            const std::optional<std::filesystem::path>& resume = std::nullopt) {
  const mech::SettingSpec s = mech::RediscoveryPerBidder{};
  const eval::Evaluator ev(s, {500, 1, false});
  prop::SymbolicProposer proposer(kPer, true);
  evo::ProgramDatabase db(cfg);
  evo::RunOptions ro;
  ro.seed = seed;
  ro.workers = workers;
  ro.out_dir = out;
  ro.stop_after = stop_after;
  evo::EvolutionRun run(db, ev, proposer, ro);
  if (resume) {
    run.resume(*resume);
  } else {
    run.seed_program(evo::default_seed_program(kPer));
  }
  return run.run();
}

}  // namespace

TEST_SUITE("evolution") {
  TEST_CASE("temperature schedule and cluster keys") {
    evo::EvolutionConfig c;
    CHECK(evo::temperature(0, c) == doctest::Approx(0.1));
    CHECK(evo::temperature(15000, c) == doctest::Approx(0.05));
    CHECK(evo::temperature(60000, c) == 0.0);
    c.temperature_floor = 0.02;
    CHECK(evo::temperature(60000, c) == doctest::Approx(0.02));
    CHECK(evo::cluster_key(0.41649) == 416);
    CHECK(evo::cluster_key(0.4165) == 417);
    CHECK(evo::cluster_key(-0.0004) == 0);
    c.num_islands = 1;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("registration deduplicates per island and assigns islands") {
    evo::ProgramDatabase db(small_config());
    const auto a = db.register_program(per("v - 0.5"), 0.4, 0);
    const auto b = db.register_program(per("v - 0.4"), 0.3, 0);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->island == 0);
    CHECK(b->island == 1);
    // same canonical text in the same island
    CHECK_FALSE(db.register_program(per("v-0.5"), 0.4, 1, {}, std::nullopt, 0));
    CHECK(db.duplicates() == 1);
    // children inherit the first parent's island
    const auto c = db.register_program(per("v - 0.45"), 0.41, 2, {b->id});
    REQUIRE(c);
    CHECK(c->island == 1);
    CHECK(c->cluster == 410);
    CHECK(db.best()->id == c->id);
    CHECK(db.best_in_island(0)->id == a->id);
    CHECK_THROWS(db.register_program(per("v"), eval::kRejectedScore, 3));
  }

  TEST_CASE("parent sampling") {
    auto cfg = small_config();
    cfg.temperature_init = 0.0;
    evo::ProgramDatabase db(cfg);
    for (int k = 0; k < 6; ++k) {
      db.register_program(per("v - " + std::to_string(0.1 * k)), 0.05 * k, 0, {}, std::nullopt, 2);
    }
    db.register_program(per("v * 2"), 0.25, 0, {}, std::nullopt, 2);
    std::mt19937_64 rng(1);
    // zero temperature: always the best cluster (0.25), which holds two programs
    for (int t = 0; t < 20; ++t) {
      const auto ps = db.sample_parents(2, 2, rng);
      REQUIRE(ps.size() == 2);
      CHECK(ps[0].cluster == 250);
      CHECK(ps[1].cluster == 250);
      CHECK(ps[0].id != ps[1].id);
    }
    CHECK_THROWS_AS(db.sample_parents(3, 2, rng), evo::EmptyIsland);
  }

  TEST_CASE("higher temperature explores more clusters") {
    auto cfg = small_config();
    cfg.temperature_init = 1.0;
    cfg.decay_horizon = 1e9;
    evo::ProgramDatabase db(cfg);
    for (int k = 0; k < 5; ++k) {
      db.register_program(per("v - " + std::to_string(0.1 * k)), 0.01 * k, 0, {}, std::nullopt, 0);
    }
    std::mt19937_64 rng(2);
    std::set<std::int64_t> seen;
    for (int t = 0; t < 200; ++t) seen.insert(db.sample_parents(0, 1, rng)[0].cluster);
    CHECK(seen.size() == 5);
  }

  TEST_CASE("reset clears the worse half and reseeds from survivors") {
    evo::ProgramDatabase db(small_config());
    for (std::size_t i = 0; i < 4; ++i) {
      db.register_program(per("v - 0.1" + std::to_string(i)), 0.1 * static_cast<double>(i), 0, {},
                          std::nullopt, i);
    }
    const auto before = db.programs();
    const auto report = db.reset_islands();
    CHECK(report.cleared == std::vector<std::size_t>{1, 0});
    CHECK(report.survivors == std::vector<std::size_t>{3, 2});
    CHECK(db.island_size(0) == 1);
    CHECK(db.island_size(1) == 1);
    const auto seeded = *db.best_in_island(1);
    CHECK(seeded.score == doctest::Approx(0.3));
    REQUIRE(seeded.parents.size() == 1);
    CHECK(seeded.parents[0] == db.best_in_island(3)->id);
    CHECK(seeded.id != db.best_in_island(3)->id);
  }

  TEST_CASE("jsonl roundtrip") {
    evo::ProgramDatabase db(small_config());
    db.register_program(per("v - 0.5"), 0.4, 0);
    db.register_program(per("sigmoid(v)"), 0.1, 3, {0}, 4);
    std::stringstream ss;
    db.save_jsonl(ss);
    evo::ProgramDatabase back(small_config());
    back.load_jsonl(ss, kPer);
    back.set_counters(db.total_registered(), db.next_id(), db.duplicates());
    const auto a = db.programs();
    const auto b = back.programs();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].to_json() == b[i].to_json());
    CHECK(b[1].strategy == 4);
    CHECK(b[1].size == a[1].size);
  }

  TEST_CASE("trace csv roundtrip") {
    std::vector<evo::TraceRow> rows = {{1, 0.1, std::nullopt, 0.1}, {2, 0.1, 0.1, std::nullopt}, {3, 0.25, 0.25, 0.25}};
    std::stringstream ss;
    evo::write_trace_csv(ss, rows);
    CHECK(ss.str().rfind("iteration,best_so_far,best_last5,score\n", 0) == 0);
    const auto back = evo::read_trace_csv(ss);
    REQUIRE(back.size() == 3);
    CHECK(back[1].iteration == 2);
    CHECK_FALSE(back[1].score.has_value());
    CHECK(back[2].best_so_far == 0.25);
  }

  TEST_CASE("runs are reproducible and best-so-far is monotone") {
    const auto a = run_symbolic(small_config(), 7, 1);
    const auto b = run_symbolic(small_config(), 7, 1);
    REQUIRE(a.trace.size() == 120);
    CHECK(a.iterations == 120);
    CHECK(a.stop_reason == "max_iterations");
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].best_so_far == b.trace[i].best_so_far);
      CHECK(a.trace[i].score == b.trace[i].score);
      if (i > 0) CHECK(a.trace[i].best_so_far >= a.trace[i - 1].best_so_far);
    }
    CHECK(a.best->source == b.best->source);
    CHECK(a.best->score > 0.0);
  }

  TEST_CASE("parallel workers are reproducible per worker count") {
    const auto a = run_symbolic(small_config(), 3, 3);
    const auto b = run_symbolic(small_config(), 3, 3);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].score == b.trace[i].score);
  }

  TEST_CASE("resume continues the same run") {
    test::TempDir dir("resume");
    const auto full = run_symbolic(small_config(), 11, 1);
    const auto first = run_symbolic(small_config(), 11, 1, dir.path(), 60);
    CHECK(first.stop_reason == "stop_after");
    CHECK(first.iterations == 60);
    CHECK(std::filesystem::exists(dir.path() / "database.jsonl"));
    CHECK(std::filesystem::exists(dir.path() / "trace.csv"));
    CHECK(std::filesystem::exists(dir.path() / "state.json"));
    const auto second = run_symbolic(small_config(), 11, 1, dir.path(), std::nullopt, dir.path());
    REQUIRE(second.trace.size() == full.trace.size());
    for (std::size_t i = 0; i < full.trace.size(); ++i) {
      CHECK(second.trace[i].best_so_far == full.trace[i].best_so_far);
      CHECK(second.trace[i].score == full.trace[i].score);
    }
    CHECK(second.best->source == full.best->source);
    CHECK_THROWS(run_symbolic(small_config(), 12, 1, std::nullopt, std::nullopt, dir.path()));
  }

  TEST_CASE("rejections are counted by category") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const eval::Evaluator ev(s, {200, 1, false});
    ScriptedProposer proposer({"def heuristic(v): return v - 0.5", "def heuristic(v): return (",
                               "import os", "def heuristic(v): return log(v - 2)",
                               "def heuristic(v): return v - 0.4"});
    auto cfg = small_config();
    cfg.max_iterations = 6;
    evo::ProgramDatabase db(cfg);
    evo::EvolutionRun run(db, ev, proposer, {});
    run.seed_program("def heuristic(v): return 0");
    const auto r = run.run();
    CHECK(r.iterations == 6);
    CHECK(r.rejections.at("parse_SyntaxError") == 1);
    CHECK(r.rejections.at("parse_ForbiddenConstruct") == 1);
    CHECK(r.rejections.at("eval_DomainError") == 1);
    CHECK(r.rejections.at("proposer_script exhausted") == 1);
    CHECK(r.best->source == "def heuristic(v): return v - 0.5");
    CHECK_FALSE(r.trace[1].score.has_value());
  }

  TEST_CASE("proposer outage stops the run cleanly") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const eval::Evaluator ev(s, {200, 1, false});
    ScriptedProposer proposer({"def heuristic(v): return v - 0.5"}, true);
    test::TempDir dir("outage");
    evo::RunOptions ro;
    ro.out_dir = dir.path();
    evo::ProgramDatabase db(small_config());
    evo::EvolutionRun run(db, ev, proposer, ro);
    run.seed_program("def heuristic(v): return 0");
    const auto r = run.run();
    CHECK(r.proposer_unavailable);
    CHECK(r.iterations == 1);
    CHECK(r.stop_reason.rfind("proposer_unavailable", 0) == 0);
    CHECK(std::filesystem::exists(dir.path() / "database.jsonl"));
  }

  TEST_CASE("interrupt and target score stop the loop") {
    std::atomic<bool> stop{true};
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const eval::Evaluator ev(s, {200, 1, false});
    prop::SymbolicProposer proposer(kPer, true);
    {
      evo::ProgramDatabase db(small_config());
      evo::RunOptions ro;
      ro.interrupt = &stop;
      evo::EvolutionRun run(db, ev, proposer, ro);
      run.seed_program("def heuristic(v): return 0");
      const auto r = run.run();
      CHECK(r.interrupted);
      CHECK(r.iterations == 0);
    }
    {
      auto cfg = small_config();
      cfg.target_score = 0.3;
      evo::ProgramDatabase db(cfg);
      evo::EvolutionRun run(db, ev, proposer, {});
      run.seed_program("def heuristic(v): return 0");
      const auto r = run.run();
      CHECK(r.stop_reason == "target_score");
      CHECK(r.best->score >= 0.3);
    }
  }

  TEST_CASE("seed programs") {
    CHECK(evo::default_seed_program(kPer) == "def heuristic(v): return 0");
    const auto joint = evo::default_seed_program(dsl::HeuristicSignature::joint(2));
    CHECK(dsl::eval_vector(dsl::parse(joint, dsl::HeuristicSignature::joint(2)), std::vector<double>{0.5, 0.5}) ==
          std::vector<double>{0, 0, 1});
  }
}
