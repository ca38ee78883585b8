#pragma once

// Brute-force checks of the design criteria (SP via grid regret, IR,
// feasibility, WBB) and a small exhaustive program search used to validate
// the evolutionary engine.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "amd/dsl.hpp"
#include "amd/evaluation.hpp"
#include "amd/mechanisms.hpp"
#include "json.hpp"

namespace amd::oracle {

using Mechanism = std::function<mech::MechanismOutcome(std::span<const double>)>;

/// {k/K : k = 0..K} with K = round(1/step).
std::vector<double> grid_points(double step);

/// Caches mechanism outcomes by exact bid profile. Not thread-safe.
class OutcomeCache {
 public:
  explicit OutcomeCache(Mechanism mechanism) : mechanism_(std::move(mechanism)) {}
  const mech::MechanismOutcome& operator()(std::span<const double> bids);
  std::size_t size() const noexcept { return cache_.size(); }

 private:
  struct Hash {
    std::size_t operator()(const std::vector<double>& v) const noexcept;
  };
  Mechanism mechanism_;
  std::unordered_map<std::vector<double>, mech::MechanismOutcome, Hash> cache_;
};

/// u_i = v_i * won_i - payment_i + redistribution_i
double utility(const mech::MechanismOutcome& outcome, std::size_t bidder, double value);

/// Max over grid profiles, bidders and deviation bids of the utility gain
/// from misreporting.
double regret_grid(OutcomeCache& mechanism, std::size_t n_bidders, double profile_step,
                   double deviation_step);
/// Max over grid profiles of (total redistribution - total payment), floored at 0.
double wbb_check(OutcomeCache& mechanism, std::size_t n_bidders, double profile_step);

struct IrFeasibility {
  double min_redistribution = 0.0;
  double min_truthful_utility = 0.0;
  bool feasible = true;
};
IrFeasibility ir_feasibility_check(OutcomeCache& mechanism, std::size_t n_bidders,
                                   double profile_step, std::size_t n_items);

struct CriteriaReport {
  double max_regret = 0.0;
  double max_wbb_violation = 0.0;
  double min_redistribution = 0.0;
  double min_truthful_utility = 0.0;
  bool feasibility_ok = true;
  std::size_t n_bidders = 0;
  std::size_t n_items = 0;
  double profile_step = 0.0;
  double deviation_step = 0.0;
  std::size_t profiles = 0;

  /// regret <= tol, wbb <= tol, redistribution >= -tol, utility >= -tol, feasible.
  bool passes(double tolerance = 1e-6) const;
  nlohmann::json to_json() const;
};

CriteriaReport verify(OutcomeCache& mechanism, std::size_t n_bidders, std::size_t n_items,
                      double profile_step, double deviation_step);

/// Memoises a heuristic by its exact input vector; on grids the number of
/// distinct inputs is small. Errors are cached and rethrown.
mech::RebateFn memoize(mech::RebateFn h);

/// The fixed mechanism the evaluator scores, as an outcome function.
/// Heuristic evaluation errors propagate as dsl::EvalError.
Mechanism fixed_mechanism(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting);

/// Full oracle report for a program under its setting.
CriteriaReport verify_program(const dsl::HeuristicProgram& program,
                              const mech::SettingSpec& setting, double profile_step = 0.05,
                              double deviation_step = 0.05);

class SpaceTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SearchOptions {
  std::size_t depth = 3;
  std::vector<double> constants{0.0, 1.0};
  std::size_t max_candidates = 2'000'000;
  eval::EvalOptions eval;
};

struct SearchResult {
  std::optional<dsl::HeuristicProgram> best;
  double best_score = eval::kRejectedScore;
  std::size_t enumerated = 0;  // syntactic candidates generated
  std::size_t distinct = 0;    // after observational-equivalence pruning
};

/// Enumerates the restricted grammar up to `depth`: leaves are the input and
/// the constants; pdf/cdf/survival of the input (per-bidder) or
/// min/max/mean/sum of the input vector (redistribution) are depth-1 atoms;
/// internal nodes are + - * /. Candidates with identical values on every
/// point the evaluator probes are merged. Returns the argmax under the
/// standard evaluator (fixed seed).
SearchResult exhaustive_small_search(const mech::SettingSpec& setting,
                                     const SearchOptions& options);

}  // namespace amd::oracle
