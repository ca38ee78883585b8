#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "amd/evaluation.hpp"

namespace amd::eval {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct PerSample {
  std::vector<double> values;
  std::size_t failed_at = kNone;
  std::string reason;
};

void lower_to(std::atomic<std::size_t>& slot, std::size_t k) {
  std::size_t cur = slot.load();
  while (k < cur && !slot.compare_exchange_weak(cur, k)) {
  }
}

// Runs f(k) for k in [0, count). Samples after the first failure may be
// skipped, but every sample before it is always computed, so the reported
// failure is the lowest failing index in either mode.
template <typename F>
PerSample run_samples(std::size_t count, Mode mode, F&& f) {
  PerSample out;
  out.values.assign(count, 0.0);
  std::vector<std::string> errors(count);
  std::atomic<std::size_t> first{kNone};
  auto body = [&](std::size_t k) {
    if (k > first.load(std::memory_order_relaxed)) return;
    try {
      out.values[k] = f(k);
    } catch (const dsl::EvalError& e) {
      errors[k] = std::string(dsl::to_string(e.kind())) + ": " + e.what();
      lower_to(first, k);
    } catch (const dist::DistributionError& e) {
      errors[k] = std::string("DomainError: ") + e.what();
      lower_to(first, k);
    }
  };
  if (mode == Mode::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
      body(static_cast<std::size_t>(k));
    }
  } else {
    for (std::size_t k = 0; k < count; ++k) body(k);
  }
  out.failed_at = first.load();
  if (out.failed_at != kNone) out.reason = errors[out.failed_at];
  return out;
}

EvaluationReport rejected(const dist::SampleBatch& batch, std::string reason) {
  EvaluationReport r;
  r.n_samples = batch.batch_size;
  r.seed = batch.seed;
  r.rejected = true;
  r.rejection_reason = std::move(reason);
  r.score = kRejectedScore;
  return r;
}

EvaluationReport finish(const dist::SampleBatch& batch, PerSample&& ps, bool keep_trace) {
  if (ps.failed_at != kNone) return rejected(batch, std::move(ps.reason));
  EvaluationReport r;
  r.n_samples = batch.batch_size;
  r.seed = batch.seed;
  const double n = static_cast<double>(ps.values.size());
  double total = 0.0;
  for (double v : ps.values) total += v;
  r.score = total / n;
  double ss = 0.0;
  for (double v : ps.values) ss += (v - r.score) * (v - r.score);
  r.standard_error = ps.values.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  if (keep_trace) r.trace = std::move(ps.values);
  return r;
}

// Per-bidder heuristics: the critical price only depends on h over the
// epsilon grid, so h is tabulated once and every sample does a binary search
// on the suffix minimum instead of a descending scan.
EvaluationReport per_bidder_revenue(const dsl::HeuristicProgram& program,
                                    const mech::RediscoveryPerBidder& setting,
                                    const dist::SampleBatch& batch, bool keep_trace, Mode mode) {
  const auto* d = &setting.distribution;
  const std::size_t steps = mech::grid_steps(setting.epsilon);
  const double kd = static_cast<double>(steps);
  PerSample table = run_samples(steps + 1, mode, [&](std::size_t k) {
    return dsl::eval_scalar(program, static_cast<double>(k) / kd, d);
  });
  if (table.failed_at != kNone) return rejected(batch, std::move(table.reason));

  const std::size_t n = batch.n_bidders;
  if (mode == Mode::Serial) {
    const mech::AllocationRule rule = mech::allocation_rule(program, d);
    return finish(batch,
                  run_samples(batch.batch_size, mode,
                              [&](std::size_t k) {
                                return mech::solve_single_item(rule, batch.profile(k),
                                                               setting.epsilon)
                                    .revenue();
                              }),
                  keep_trace);
  }

  std::vector<double> suffix_min(table.values);
  for (std::size_t k = steps; k-- > 0;) suffix_min[k] = std::min(suffix_min[k], suffix_min[k + 1]);

  auto revenue = [&](std::size_t k) {
    const auto bids = batch.profile(k);
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = dsl::eval_scalar(program, bids[i], d);
    return eval::per_bidder_revenue(suffix_min, h, bids);
  };
  return finish(batch, run_samples(batch.batch_size, mode, revenue), keep_trace);
}

EvaluationReport joint_revenue(const dsl::HeuristicProgram& program,
                               const mech::SingleItemRevenue& setting,
                               const dist::SampleBatch& batch, bool keep_trace, Mode mode) {
  const auto* d = std::get_if<dist::MarginalDistribution>(&setting.distribution);
  const mech::AllocationRule rule = mech::allocation_rule(program, d);
  return finish(batch,
                run_samples(batch.batch_size, mode,
                            [&](std::size_t k) {
                              return mech::solve_single_item(rule, batch.profile(k),
                                                             setting.epsilon)
                                  .revenue();
                            }),
                keep_trace);
}

EvaluationReport redistribution(const dsl::HeuristicProgram& program,
                                const mech::VcgRedistribution& setting,
                                const dist::SampleBatch& batch, bool keep_trace, Mode mode) {
  const mech::RebateFn h = mech::rebate_fn(program, &setting.distribution);
  const mech::FixOptions fix{setting.fix_grid_resolution};
  return finish(batch,
                run_samples(batch.batch_size, mode,
                            [&](std::size_t k) {
                              const auto bids = batch.profile(k);
                              auto out = mech::corrected_fix(h, bids, setting.n_items, fix);
                              if (setting.reverse_fix != mech::ReverseFix::Off) {
                                out = mech::reverse_waterfill(out, h, bids, setting.n_items, fix,
                                                              setting.reverse_fix);
                              }
                              return out.total_redistribution();
                            }),
                keep_trace);
}

EvaluationReport distillation(const dsl::HeuristicProgram& program,
                              const mech::Distillation& setting, const dist::SampleBatch& batch,
                              bool keep_trace, Mode mode) {
  const auto* d = mech::bound_marginal(*setting.inner);
  const bool per_bidder = program.signature().kind == dsl::SignatureKind::PerBidderScore;
  const std::size_t n = batch.n_bidders;
  auto distance = [&](std::size_t k) {
    const auto bids = batch.profile(k);
    double acc = 0.0;
    std::vector<double> x;
    for (std::size_t i = 0; i < n; ++i) {
      x.clear();
      if (per_bidder) {
        x.push_back(bids[i]);
      } else {
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) x.push_back(bids[j]);
        }
        std::sort(x.begin(), x.end());
      }
      const double got = per_bidder ? dsl::eval_scalar(program, x[0], d)
                                    : dsl::eval_scalar(program, x, d);
      const double diff = got - setting.goal(x);
      acc += setting.metric == mech::Metric::L1 ? std::fabs(diff) : diff * diff;
    }
    return -acc / static_cast<double>(n);
  };
  return finish(batch, run_samples(batch.batch_size, mode, distance), keep_trace);
}

std::string mismatch_reason(const dsl::HeuristicProgram& program, const mech::SettingSpec& s) {
  return "SignatureMismatch: heuristic has signature " + program.signature().name() +
         ", setting requires " + mech::signature_for(s).name();
}

}  // namespace

double per_bidder_revenue(std::span<const double> suffix_min, std::span<const double> h_at_bids,
                          std::span<const double> bids) {
  const std::size_t n = bids.size();
  std::size_t w = n;  // no-sale slot scores 0
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (h_at_bids[i] > best || (w == n && h_at_bids[i] == best)) {
      best = h_at_bids[i];
      w = i;
    }
  }
  if (w == n) return 0.0;
  double above = -std::numeric_limits<double>::infinity();  // must be beaten strictly
  for (std::size_t j = 0; j < w; ++j) above = std::max(above, h_at_bids[j]);
  double tie_ok = 0.0;  // matched or beaten, no-sale slot included
  for (std::size_t j = w + 1; j < n; ++j) tie_ok = std::max(tie_ok, h_at_bids[j]);
  auto it = std::partition_point(suffix_min.begin(), suffix_min.end(),
                                 [&](double s) { return !(s > above && s >= tie_ok); });
  if (it == suffix_min.end()) return 0.0;
  const double price =
      static_cast<double>(it - suffix_min.begin()) / static_cast<double>(suffix_min.size() - 1);
  return price <= bids[w] ? price : 0.0;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["score"] = rejected ? nlohmann::json(nullptr) : nlohmann::json(score);
  j["n_samples"] = n_samples;
  j["seed"] = seed;
  j["rejected"] = rejected;
  if (rejected) j["rejection_reason"] = rejection_reason;
  j["standard_error"] = standard_error;
  return j;
}

std::size_t default_samples(const mech::SettingSpec& setting) {
  if (std::holds_alternative<mech::VcgRedistribution>(setting)) return 3000;
  if (const auto* d = std::get_if<mech::Distillation>(&setting)) return default_samples(*d->inner);
  return 10000;
}

dist::SampleBatch draw_samples(const mech::SettingSpec& setting, std::size_t n_samples,
                               std::uint64_t seed) {
  if (n_samples == 0) n_samples = default_samples(setting);
  return std::visit(
      [&](const auto& s) -> dist::SampleBatch {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, mech::SingleItemRevenue>) {
          return dist::sample(s.distribution, s.n_bidders, n_samples, seed);
        } else if constexpr (std::is_same_v<T, mech::Distillation>) {
          return draw_samples(*s.inner, n_samples, seed);
        } else {
          return dist::sample(s.distribution, s.n_bidders, n_samples, seed);
        }
      },
      static_cast<const mech::SettingSpec::variant&>(setting));
}

EvaluationReport score_batch(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting,
                             const dist::SampleBatch& batch, bool keep_trace, Mode mode) {
  if (!(program.signature() == mech::signature_for(setting))) {
    return rejected(batch, mismatch_reason(program, setting));
  }
  if (const auto* s = std::get_if<mech::SingleItemRevenue>(&setting)) {
    return joint_revenue(program, *s, batch, keep_trace, mode);
  }
  if (const auto* s = std::get_if<mech::RediscoveryPerBidder>(&setting)) {
    return per_bidder_revenue(program, *s, batch, keep_trace, mode);
  }
  if (const auto* s = std::get_if<mech::VcgRedistribution>(&setting)) {
    return redistribution(program, *s, batch, keep_trace, mode);
  }
  return distillation(program, std::get<mech::Distillation>(setting), batch, keep_trace, mode);
}

EvaluationReport score(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting,
                       const EvalOptions& options, Mode mode) {
  const auto batch = draw_samples(setting, options.n_samples, options.seed);
  return score_batch(program, setting, batch, options.keep_trace, mode);
}

EvaluationReport score_revenue(const dsl::HeuristicProgram& program,
                               const mech::SettingSpec& setting, const EvalOptions& options) {
  if (!std::holds_alternative<mech::SingleItemRevenue>(setting) &&
      !std::holds_alternative<mech::RediscoveryPerBidder>(setting)) {
    throw mech::SettingError("score_revenue needs a single-item or rediscovery setting");
  }
  return score(program, setting, options);
}

EvaluationReport score_redistribution(const dsl::HeuristicProgram& program,
                                      const mech::SettingSpec& setting,
                                      const EvalOptions& options) {
  if (!std::holds_alternative<mech::VcgRedistribution>(setting)) {
    throw mech::SettingError("score_redistribution needs a VCG redistribution setting");
  }
  return score(program, setting, options);
}

EvaluationReport score_distillation(const dsl::HeuristicProgram& program,
                                    const mech::SettingSpec& setting, const EvalOptions& options) {
  if (!std::holds_alternative<mech::Distillation>(setting)) {
    throw mech::SettingError("score_distillation needs a distillation setting");
  }
  return score(program, setting, options);
}

EvaluationReport score_multi(const dsl::HeuristicProgram& program,
                             std::span<const mech::SettingSpec> settings,
                             const EvalOptions& options) {
  if (settings.empty()) throw mech::SettingError("score_multi needs at least one setting");
  EvaluationReport combined;
  combined.seed = options.seed;
  double total = 0.0;
  for (std::size_t k = 0; k < settings.size(); ++k) {
    EvalOptions o = options;
    o.seed = settings.size() == 1 ? options.seed : dist::derive_seed(options.seed, k);
    o.keep_trace = false;
    const auto r = score(program, settings[k], o);
    combined.n_samples += r.n_samples;
    if (r.rejected) {
      combined.rejected = true;
      combined.rejection_reason = r.rejection_reason;
      combined.score = kRejectedScore;
      return combined;
    }
    total += r.score;
  }
  combined.score = total / static_cast<double>(settings.size());
  return combined;
}

EvaluationReport score_myerson(const mech::SettingSpec& setting, bool ironed,
                               const EvalOptions& options) {
  std::optional<mech::MyersonAuction> auction;
  if (const auto* s = std::get_if<mech::SingleItemRevenue>(&setting)) {
    auction.emplace(mech::MyersonAuction::for_model(s->distribution, s->n_bidders, ironed));
  } else if (const auto* r = std::get_if<mech::RediscoveryPerBidder>(&setting)) {
    auction.emplace(mech::MyersonAuction::for_model(r->distribution, r->n_bidders, ironed));
  } else {
    throw mech::SettingError("Myerson baseline needs a single-item or rediscovery setting");
  }
  const auto batch = draw_samples(setting, options.n_samples, options.seed);
  return finish(batch,
                run_samples(batch.batch_size, Mode::Parallel,
                            [&](std::size_t k) { return (*auction)(batch.profile(k)).revenue(); }),
                options.keep_trace);
}

void write_trace_csv(const EvaluationReport& report, std::ostream& out) {
  out << "sample_index,score_component\n";
  out.precision(17);
  for (std::size_t k = 0; k < report.trace.size(); ++k) out << k << "," << report.trace[k] << "\n";
}

void write_trace_csv(const EvaluationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path + "'");
  write_trace_csv(report, out);
}

Evaluator::Evaluator(mech::SettingSpec setting, const EvalOptions& options)
    : Evaluator(std::vector<mech::SettingSpec>{std::move(setting)}, options) {}

Evaluator::Evaluator(std::vector<mech::SettingSpec> settings, const EvalOptions& options)
    : settings_(std::move(settings)), n_samples_(options.n_samples), seed_(options.seed) {
  if (settings_.empty()) throw mech::SettingError("evaluator needs at least one setting");
  const auto sig = mech::signature_for(settings_.front());
  for (std::size_t k = 0; k < settings_.size(); ++k) {
    mech::validate(settings_[k]);
    if (!(mech::signature_for(settings_[k]) == sig)) {
      throw mech::SettingError("all settings of a multi-distribution evaluator need one signature");
    }
    const std::uint64_t s = settings_.size() == 1 ? seed_ : dist::derive_seed(seed_, k);
    batches_.push_back(draw_samples(settings_[k], n_samples_, s));
  }
  n_samples_ = batches_.front().batch_size;
}

EvaluationReport Evaluator::operator()(const dsl::HeuristicProgram& program) const {
  if (settings_.size() == 1) return score_batch(program, settings_[0], batches_[0], false);
  EvaluationReport combined;
  combined.seed = seed_;
  double total = 0.0;
  for (std::size_t k = 0; k < settings_.size(); ++k) {
    const auto r = score_batch(program, settings_[k], batches_[k], false);
    combined.n_samples += r.n_samples;
    if (r.rejected) {
      combined.rejected = true;
      combined.rejection_reason = r.rejection_reason;
      combined.score = kRejectedScore;
      return combined;
    }
    total += r.score;
  }
  combined.score = total / static_cast<double>(settings_.size());
  return combined;
}

}  // namespace amd::eval
