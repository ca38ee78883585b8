#pragma once

// Island-model program search: database, parent sampling, resets and the
// main loop with JSONL / CSV persistence.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "amd/dsl.hpp"
#include "amd/evaluation.hpp"
#include "amd/proposers.hpp"
#include "json.hpp"

namespace amd::evo {

enum class ResetClock { WallTime, Iterations };

struct EvolutionConfig {
  std::size_t num_islands = 10;
  ResetClock reset_clock = ResetClock::WallTime;
  double reset_period = 3600.0;  // seconds, or iterations
  double reset_fraction = 0.5;
  double temperature_init = 0.1;
  double temperature_floor = 0.0;
  double decay_horizon = 30000.0;
  std::size_t functions_per_prompt = 2;
  bool use_strategies = true;
  std::size_t max_iterations = 1000;
  std::optional<double> target_score;  // stop once reached

  void validate() const;
};

/// max(floor, init * (1 - total / horizon))
double temperature(std::size_t total_registered, const EvolutionConfig& config);

/// round(score, 3) as an integer key (score * 1000).
std::int64_t cluster_key(double score);

struct ScoredProgram {
  std::size_t id = 0;
  std::string source;  // canonical text
  double score = 0.0;
  std::size_t island = 0;
  std::int64_t cluster = 0;
  std::size_t iteration = 0;
  std::vector<std::size_t> parents;
  std::optional<int> strategy;
  std::size_t size = 0;  // structural size

  nlohmann::json to_json() const;
  static ScoredProgram from_json(const nlohmann::json& j);
};

class EmptyIsland : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ResetReport {
  std::vector<std::size_t> cleared;
  std::vector<std::size_t> survivors;
};

/// Thread-safe: every public member takes the database lock.
class ProgramDatabase {
 public:
  explicit ProgramDatabase(EvolutionConfig config);

  /// Stores a program whose score is finite. `island` defaults to the first
  /// parent's island, or round-robin when there are no parents. Returns
  /// nullopt when the canonical text is already in that island.
  std::optional<ScoredProgram> register_program(const dsl::HeuristicProgram& program, double score,
                                                std::size_t iteration,
                                                std::vector<std::size_t> parents = {},
                                                std::optional<int> strategy = std::nullopt,
                                                std::optional<std::size_t> island = std::nullopt);

  /// Softmax over cluster best scores at the current temperature, then up to
  /// k distinct programs from that cluster weighted by 1 / size.
  std::vector<ScoredProgram> sample_parents(std::size_t island, std::size_t k,
                                            std::mt19937_64& rng) const;

  /// Clears the worse islands (by best score, ties by index) and re-seeds
  /// each with the best program of a survivor, round-robin.
  ResetReport reset_islands();

  std::optional<ScoredProgram> best() const;
  std::optional<ScoredProgram> best_in_island(std::size_t island) const;
  std::size_t island_size(std::size_t island) const;
  std::vector<ScoredProgram> programs() const;
  std::size_t total_registered() const;
  std::size_t duplicates() const;
  const EvolutionConfig& config() const noexcept { return config_; }

  /// One ScoredProgram per line.
  void save_jsonl(std::ostream& out) const;
  void save_jsonl(const std::filesystem::path& path) const;
  /// Replaces the contents. Counters are restored separately.
  void load_jsonl(std::istream& in, const dsl::HeuristicSignature& signature);
  void load_jsonl(const std::filesystem::path& path, const dsl::HeuristicSignature& signature);
  void set_counters(std::size_t total_registered, std::size_t next_id, std::size_t duplicates);
  std::size_t next_id() const;

 private:
  struct Island {
    std::map<std::int64_t, std::vector<std::size_t>> clusters;  // -> indices into programs_
    std::unordered_set<std::string> sources;
  };
  void insert_locked(ScoredProgram p);
  std::optional<std::size_t> best_index_locked(std::size_t island) const;

  EvolutionConfig config_;
  mutable std::mutex mutex_;
  std::vector<Island> islands_;
  std::vector<ScoredProgram> programs_;
  std::size_t total_registered_ = 0;
  std::size_t next_id_ = 0;
  std::size_t duplicates_ = 0;
};

struct TraceRow {
  std::size_t iteration = 0;
  double best_so_far = eval::kRejectedScore;
  std::optional<double> best_last5;
  std::optional<double> score;  // empty when the candidate was rejected
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(std::istream& in);

struct RunOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // 1 = deterministic single-stream mode
  /// Artifacts (database.jsonl, trace.csv, state.json) go here when set.
  std::optional<std::filesystem::path> out_dir;
  std::size_t checkpoint_every = 1;
  /// Stop after this many iterations in this call (for interruption tests).
  std::optional<std::size_t> stop_after;
  const std::atomic<bool>* interrupt = nullptr;
  std::function<void(const TraceRow&)> on_iteration;
};

struct RunReport {
  std::optional<ScoredProgram> best;
  std::vector<TraceRow> trace;
  std::size_t iterations = 0;  // completed, including earlier sessions
  std::map<std::string, std::size_t> rejections;
  bool interrupted = false;
  bool proposer_unavailable = false;
  std::string stop_reason;

  nlohmann::json summary() const;
};

/// The evolution state that survives a restart.
struct RunState {
  std::size_t iteration = 0;
  std::size_t last_reset_iteration = 0;
  std::vector<TraceRow> trace;
  std::map<std::string, std::size_t> rejections;
};

/// Runs the loop until max_iterations, the target score, an interrupt or a
/// proposer outage. With workers > 1, each round samples `workers` requests
/// serially, proposes and evaluates them in parallel, and registers them in
/// iteration order, so results depend on the worker count but not on timing.
class EvolutionRun {
 public:
  EvolutionRun(ProgramDatabase& db, const eval::Evaluator& evaluator, prop::Proposer& proposer,
               RunOptions options);

  /// Registers `source` in every island as the starting point.
  void seed_program(const std::string& source);
  /// Restores database, trace and counters from `dir`.
  void resume(const std::filesystem::path& dir);

  RunReport run();

  const RunState& state() const noexcept { return state_; }
  void checkpoint() const;

 private:
  struct Outcome;
  Outcome attempt(std::size_t iteration, const std::vector<ScoredProgram>& parents,
                  std::optional<int> strategy);

  ProgramDatabase& db_;
  const eval::Evaluator& evaluator_;
  prop::Proposer& proposer_;
  RunOptions options_;
  RunState state_;
};

/// Naive starting heuristic for a signature: 0, or "never sell".
std::string default_seed_program(const dsl::HeuristicSignature& signature);

}  // namespace amd::evo
