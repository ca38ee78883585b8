#pragma once

// Monte Carlo scoring of heuristics. Per-sample values are computed into an
// array (in parallel when OpenMP is enabled) and reduced serially in sample
// order, so a score never depends on the thread count.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amd/distributions.hpp"
#include "amd/dsl.hpp"
#include "amd/mechanisms.hpp"
#include "json.hpp"

namespace amd::eval {

/// Ordered below every finite score.
inline constexpr double kRejectedScore = -std::numeric_limits<double>::infinity();

struct EvaluationReport {
  double score = kRejectedScore;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  bool rejected = false;
  std::string rejection_reason;
  double standard_error = 0.0;
  std::vector<double> trace;  // per-sample components when requested

  nlohmann::json to_json() const;
};

struct EvalOptions {
  std::size_t n_samples = 0;  // 0: the setting's default
  std::uint64_t seed = 0;
  bool keep_trace = false;
};

enum class Mode { Parallel, Serial };

/// 3000 for redistribution (and distillation over it), 10000 otherwise.
std::size_t default_samples(const mech::SettingSpec& setting);

/// Draws the batch a setting is scored on.
dist::SampleBatch draw_samples(const mech::SettingSpec& setting, std::size_t n_samples,
                               std::uint64_t seed);

/// Scores against an existing batch. Mode::Serial is the reference path: it
/// runs the mechanism definitions literally (descending critical-price scan
/// per sample) on one thread.
EvaluationReport score_batch(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting,
                             const dist::SampleBatch& batch, bool keep_trace,
                             Mode mode = Mode::Parallel);

EvaluationReport score_revenue(const dsl::HeuristicProgram& program,
                               const mech::SettingSpec& setting, const EvalOptions& options);
EvaluationReport score_redistribution(const dsl::HeuristicProgram& program,
                                      const mech::SettingSpec& setting, const EvalOptions& options);
EvaluationReport score_distillation(const dsl::HeuristicProgram& program,
                                    const mech::SettingSpec& setting, const EvalOptions& options);
/// Dispatches on the setting kind.
EvaluationReport score(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting,
                       const EvalOptions& options, Mode mode = Mode::Parallel);
/// Unweighted mean over settings; rejected if any component is. With more
/// than one setting, setting k uses seed derive_seed(options.seed, k).
EvaluationReport score_multi(const dsl::HeuristicProgram& program,
                             std::span<const mech::SettingSpec> settings,
                             const EvalOptions& options);

/// Expected revenue of Myerson's auction (optionally ironed) on a
/// single-item or rediscovery setting.
EvaluationReport score_myerson(const mech::SettingSpec& setting, bool ironed,
                               const EvalOptions& options);

/// Revenue of the per-bidder mechanism at one profile, given the suffix
/// minimum of h over the epsilon grid {k/K} and h at each bid. Equal to the
/// descending critical-price scan.
double per_bidder_revenue(std::span<const double> suffix_min, std::span<const double> h_at_bids,
                          std::span<const double> bids);

/// `sample_index,score_component` rows.
void write_trace_csv(const EvaluationReport& report, std::ostream& out);
void write_trace_csv(const EvaluationReport& report, const std::string& path);

/// Fixed-batch evaluator used as the fitness function during evolution.
/// Samples are drawn once at construction; thread-safe.
class Evaluator {
 public:
  Evaluator(mech::SettingSpec setting, const EvalOptions& options);
  Evaluator(std::vector<mech::SettingSpec> settings, const EvalOptions& options);

  EvaluationReport operator()(const dsl::HeuristicProgram& program) const;

  const std::vector<mech::SettingSpec>& settings() const noexcept { return settings_; }
  dsl::HeuristicSignature signature() const { return mech::signature_for(settings_.front()); }
  std::size_t n_samples() const noexcept { return n_samples_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::vector<mech::SettingSpec> settings_;
  std::vector<dist::SampleBatch> batches_;
  std::size_t n_samples_;
  std::uint64_t seed_;
};

}  // namespace amd::eval
