#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <unordered_set>

#include "amd/oracle.hpp"

namespace amd::oracle {

namespace {

std::uint64_t bits(double x) {
  std::uint64_t u = 0;
  std::memcpy(&u, &x, sizeof u);
  return u;
}

std::uint64_t hash_values(std::span<const double> v) {
  std::uint64_t h = 0x243f6a8885a308d3ULL ^ v.size();
  for (double x : v) h = dist::splitmix64(h ^ bits(x));
  return h;
}

// Calls f(profile) for every profile of the n-fold product grid.
template <typename F>
std::size_t for_each_profile(const std::vector<double>& grid, std::size_t n, F&& f) {
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> profile(n, grid.front());
  std::size_t count = 0;
  while (true) {
    f(std::span<const double>(profile));
    ++count;
    std::size_t d = n;
    while (d > 0) {
      --d;
      if (++idx[d] < grid.size()) {
        profile[d] = grid[idx[d]];
        break;
      }
      idx[d] = 0;
      profile[d] = grid[0];
      if (d == 0) return count;
    }
    if (n == 0) return count;
  }
}

std::size_t n_items_of(const mech::SettingSpec& s) {
  if (const auto* v = std::get_if<mech::VcgRedistribution>(&s)) return v->n_items;
  if (const auto* d = std::get_if<mech::Distillation>(&s)) return n_items_of(*d->inner);
  return 1;
}

}  // namespace

std::vector<double> grid_points(double step) {
  if (!(step > 0.0) || step > 1.0) throw std::invalid_argument("grid step must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::max(1.0, std::round(1.0 / step)));
  std::vector<double> out(k + 1);
  for (std::size_t i = 0; i <= k; ++i) out[i] = static_cast<double>(i) / static_cast<double>(k);
  return out;
}

std::size_t OutcomeCache::Hash::operator()(const std::vector<double>& v) const noexcept {
  return static_cast<std::size_t>(hash_values(v));
}

const mech::MechanismOutcome& OutcomeCache::operator()(std::span<const double> bids) {
  std::vector<double> key(bids.begin(), bids.end());
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto outcome = mechanism_(bids);
  return cache_.emplace(std::move(key), std::move(outcome)).first->second;
}

double utility(const mech::MechanismOutcome& outcome, std::size_t bidder, double value) {
  const bool won =
      std::find(outcome.winners.begin(), outcome.winners.end(), bidder) != outcome.winners.end();
  const double redistribution =
      bidder < outcome.redistribution.size() ? outcome.redistribution[bidder] : 0.0;
  return (won ? value : 0.0) - outcome.payments[bidder] + redistribution;
}

double regret_grid(OutcomeCache& mechanism, std::size_t n_bidders, double profile_step,
                   double deviation_step) {
  const auto grid = grid_points(profile_step);
  const auto deviations = grid_points(deviation_step);
  double worst = 0.0;
  std::vector<double> probe(n_bidders);
  for_each_profile(grid, n_bidders, [&](std::span<const double> profile) {
    const mech::MechanismOutcome truthful = mechanism(profile);
    std::copy(profile.begin(), profile.end(), probe.begin());
    for (std::size_t i = 0; i < n_bidders; ++i) {
      const double value = profile[i];
      const double base = utility(truthful, i, value);
      for (double d : deviations) {
        if (d == value) continue;
        probe[i] = d;
        worst = std::max(worst, utility(mechanism(probe), i, value) - base);
      }
      probe[i] = value;
    }
  });
  return worst;
}

double wbb_check(OutcomeCache& mechanism, std::size_t n_bidders, double profile_step) {
  double worst = 0.0;
  for_each_profile(grid_points(profile_step), n_bidders, [&](std::span<const double> profile) {
    const auto& o = mechanism(profile);
    worst = std::max(worst, o.total_redistribution() - o.revenue());
  });
  return worst;
}

IrFeasibility ir_feasibility_check(OutcomeCache& mechanism, std::size_t n_bidders,
                                   double profile_step, std::size_t n_items) {
  IrFeasibility out;
  out.min_redistribution = std::numeric_limits<double>::infinity();
  out.min_truthful_utility = std::numeric_limits<double>::infinity();
  for_each_profile(grid_points(profile_step), n_bidders, [&](std::span<const double> profile) {
    const auto& o = mechanism(profile);
    for (std::size_t i = 0; i < n_bidders; ++i) {
      const double r = i < o.redistribution.size() ? o.redistribution[i] : 0.0;
      out.min_redistribution = std::min(out.min_redistribution, r);
      out.min_truthful_utility = std::min(out.min_truthful_utility, utility(o, i, profile[i]));
    }
    std::vector<std::size_t> w = o.winners;
    std::sort(w.begin(), w.end());
    const bool distinct = std::adjacent_find(w.begin(), w.end()) == w.end();
    const bool in_range = w.empty() || w.back() < n_bidders;
    if (w.size() > n_items || !distinct || !in_range) out.feasible = false;
  });
  return out;
}

bool CriteriaReport::passes(double tolerance) const {
  return max_regret <= tolerance && max_wbb_violation <= tolerance &&
         min_redistribution >= -tolerance && min_truthful_utility >= -tolerance && feasibility_ok;
}

nlohmann::json CriteriaReport::to_json() const {
  return {{"max_regret", max_regret},
          {"max_wbb_violation", max_wbb_violation},
          {"min_redistribution", min_redistribution},
          {"min_truthful_utility", min_truthful_utility},
          {"feasibility_ok", feasibility_ok},
          {"grid",
           {{"n_bidders", n_bidders},
            {"n_items", n_items},
            {"profile_step", profile_step},
            {"deviation_step", deviation_step},
            {"profiles", profiles}}}};
}

CriteriaReport verify(OutcomeCache& mechanism, std::size_t n_bidders, std::size_t n_items,
                      double profile_step, double deviation_step) {
  CriteriaReport r;
  r.n_bidders = n_bidders;
  r.n_items = n_items;
  r.profile_step = profile_step;
  r.deviation_step = deviation_step;
  r.profiles = static_cast<std::size_t>(
      std::pow(static_cast<double>(grid_points(profile_step).size()), static_cast<double>(n_bidders)));
  const auto ir = ir_feasibility_check(mechanism, n_bidders, profile_step, n_items);
  r.min_redistribution = ir.min_redistribution;
  r.min_truthful_utility = ir.min_truthful_utility;
  r.feasibility_ok = ir.feasible;
  r.max_wbb_violation = wbb_check(mechanism, n_bidders, profile_step);
  r.max_regret = regret_grid(mechanism, n_bidders, profile_step, deviation_step);
  return r;
}

mech::RebateFn memoize(mech::RebateFn h) {
  struct Entry {
    double value = 0.0;
    std::optional<dsl::EvalError> error;
  };
  auto memo = std::make_shared<std::map<std::vector<double>, Entry>>();
  return [h = std::move(h), memo](std::span<const double> others) {
    std::vector<double> key(others.begin(), others.end());
    auto it = memo->find(key);
    if (it == memo->end()) {
      Entry e;
      try {
        e.value = h(others);
      } catch (const dsl::EvalError& err) {
        e.error = err;
      }
      it = memo->emplace(std::move(key), std::move(e)).first;
    }
    if (it->second.error) throw *it->second.error;
    return it->second.value;
  };
}

Mechanism fixed_mechanism(const dsl::HeuristicProgram& program, const mech::SettingSpec& setting) {
  auto owned = std::make_shared<const dsl::HeuristicProgram>(program);
  if (const auto* d = std::get_if<mech::Distillation>(&setting)) {
    return fixed_mechanism(program, *d->inner);
  }
  auto kept = std::make_shared<const mech::SettingSpec>(setting);
  const auto* marginal = mech::bound_marginal(*kept);
  if (const auto* v = std::get_if<mech::VcgRedistribution>(&setting)) {
    const mech::RebateFn h = memoize(mech::rebate_fn(*owned, marginal));
    const mech::FixOptions fix{v->fix_grid_resolution};
    const std::size_t m = v->n_items;
    const mech::ReverseFix reverse = v->reverse_fix;
    return [owned, kept, h, fix, m, reverse](std::span<const double> bids) {
      auto out = mech::corrected_fix(h, bids, m, fix);
      if (reverse != mech::ReverseFix::Off) out = mech::reverse_waterfill(out, h, bids, m, fix, reverse);
      return out;
    };
  }
  const double eps = std::holds_alternative<mech::SingleItemRevenue>(setting)
                         ? std::get<mech::SingleItemRevenue>(setting).epsilon
                         : std::get<mech::RediscoveryPerBidder>(setting).epsilon;
  auto rule = std::make_shared<mech::AllocationRule>(mech::allocation_rule(*owned, marginal));
  return [owned, kept, rule, eps](std::span<const double> bids) {
    return mech::solve_single_item(*rule, bids, eps);
  };
}

CriteriaReport verify_program(const dsl::HeuristicProgram& program,
                              const mech::SettingSpec& setting, double profile_step,
                              double deviation_step) {
  OutcomeCache cache(fixed_mechanism(program, setting));
  return verify(cache, mech::n_bidders(setting), n_items_of(setting), profile_step, deviation_step);
}

namespace {

struct Candidate {
  dsl::ExprPtr expr;
  std::size_t depth = 0;
  std::vector<double> values;
};

enum class Op { Add, Sub, Mul, Div };

bool apply(Op op, std::span<const double> a, std::span<const double> b, std::vector<double>& out) {
  out.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double r = 0.0;
    switch (op) {
      case Op::Add: r = a[i] + b[i]; break;
      case Op::Sub: r = a[i] - b[i]; break;
      case Op::Mul: r = a[i] * b[i]; break;
      case Op::Div:
        if (b[i] == 0.0) return false;
        r = a[i] / b[i];
        break;
    }
    if (!std::isfinite(r)) return false;
    out[i] = r;
  }
  return true;
}

dsl::BinaryOp to_bop(Op op) {
  switch (op) {
    case Op::Add: return dsl::BinaryOp::Add;
    case Op::Sub: return dsl::BinaryOp::Sub;
    case Op::Mul: return dsl::BinaryOp::Mul;
    case Op::Div: return dsl::BinaryOp::Div;
  }
  return dsl::BinaryOp::Add;
}

dsl::ExprPtr constant_expr(double c) {
  return c < 0.0 ? dsl::make_neg(dsl::make_number(-c)) : dsl::make_number(c);
}

// Probe layout and scoring for one setting kind.
struct Space {
  std::vector<Candidate> leaves;
  std::vector<Candidate> unary;  // depth-1 atoms
  std::function<double(const std::vector<double>&)> score;
  dsl::HeuristicSignature signature;
  std::string param;
};

Space per_bidder_space(const mech::RediscoveryPerBidder& s, const SearchOptions& opt) {
  Space sp;
  sp.signature = dsl::HeuristicSignature::per_bidder();
  sp.param = "v";
  const auto batch = eval::draw_samples(s, opt.eval.n_samples, opt.eval.seed);
  const std::size_t steps = mech::grid_steps(s.epsilon);
  std::vector<double> points;
  for (std::size_t k = 0; k <= steps; ++k) {
    points.push_back(static_cast<double>(k) / static_cast<double>(steps));
  }
  points.insert(points.end(), batch.values.begin(), batch.values.end());

  sp.leaves.push_back({dsl::make_var("v"), 0, points});
  for (double c : opt.constants) {
    sp.leaves.push_back({constant_expr(c), 0, std::vector<double>(points.size(), c)});
  }
  const dsl::Builtin fns[] = {dsl::Builtin::Pdf, dsl::Builtin::Cdf, dsl::Builtin::Survival};
  for (auto fn : fns) {
    Candidate c{dsl::make_call(fn, {dsl::make_var("v")}), 1, {}};
    bool ok = true;
    for (double x : points) {
      double y = 0.0;
      try {
        y = fn == dsl::Builtin::Pdf   ? s.distribution.pdf(x)
            : fn == dsl::Builtin::Cdf ? s.distribution.cdf(x)
                                      : s.distribution.survival(x);
      } catch (const dist::DistributionError&) {
        ok = false;
        break;
      }
      if (!std::isfinite(y)) {
        ok = false;
        break;
      }
      c.values.push_back(y);
    }
    if (ok) sp.unary.push_back(std::move(c));
  }

  const std::size_t n = batch.n_bidders;
  const std::size_t n_samples = batch.batch_size;
  sp.score = [steps, n, n_samples, batch](const std::vector<double>& values) {
    std::vector<double> suffix(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(steps + 1));
    for (std::size_t k = steps; k-- > 0;) suffix[k] = std::min(suffix[k], suffix[k + 1]);
    double total = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
      const std::span<const double> h(values.data() + steps + 1 + k * n, n);
      total += eval::per_bidder_revenue(suffix, h, batch.profile(k));
    }
    return total / static_cast<double>(n_samples);
  };
  return sp;
}

Space redistribution_space(const mech::VcgRedistribution& s, const SearchOptions& opt) {
  Space sp;
  sp.signature = dsl::HeuristicSignature::redistribution(s.n_bidders);
  sp.param = "others_bids";
  const auto batch = eval::draw_samples(s, opt.eval.n_samples, opt.eval.seed);
  const std::size_t n = s.n_bidders;
  // Probe inputs: every sorted leave-one-out vector of the batch.
  std::vector<std::vector<double>> inputs;
  for (std::size_t k = 0; k < batch.batch_size; ++k) {
    const auto bids = batch.profile(k);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) x.push_back(bids[j]);
      }
      std::sort(x.begin(), x.end());
      inputs.push_back(std::move(x));
    }
  }
  auto var = dsl::make_var("others_bids");
  for (std::size_t k = 0; k + 1 < n; ++k) {
    Candidate c{dsl::make_index(var, dsl::make_number(static_cast<double>(k))), 0, {}};
    for (const auto& x : inputs) c.values.push_back(x[k]);
    sp.leaves.push_back(std::move(c));
  }
  for (double c : opt.constants) {
    sp.leaves.push_back({constant_expr(c), 0, std::vector<double>(inputs.size(), c)});
  }
  const dsl::Builtin fns[] = {dsl::Builtin::Min, dsl::Builtin::Max, dsl::Builtin::Mean,
                              dsl::Builtin::Sum};
  for (auto fn : fns) {
    Candidate c{dsl::make_call(fn, {var}), 1, {}};
    for (const auto& x : inputs) {
      double y = 0.0;
      if (fn == dsl::Builtin::Min) y = *std::min_element(x.begin(), x.end());
      if (fn == dsl::Builtin::Max) y = *std::max_element(x.begin(), x.end());
      if (fn == dsl::Builtin::Sum || fn == dsl::Builtin::Mean) {
        for (double v : x) y += v;
        if (fn == dsl::Builtin::Mean) y /= static_cast<double>(x.size());
      }
      c.values.push_back(y);
    }
    sp.unary.push_back(std::move(c));
  }
  // No score: candidates go through the full evaluator.
  return sp;
}

}  // namespace

SearchResult exhaustive_small_search(const mech::SettingSpec& setting,
                                     const SearchOptions& options) {
  Space sp;
  if (const auto* r = std::get_if<mech::RediscoveryPerBidder>(&setting)) {
    sp = per_bidder_space(*r, options);
  } else if (const auto* v = std::get_if<mech::VcgRedistribution>(&setting)) {
    sp = redistribution_space(*v, options);
  } else {
    throw mech::SettingError("exhaustive search supports rediscovery and redistribution settings");
  }

  std::optional<eval::Evaluator> evaluator;
  if (!sp.score) {
    evaluator.emplace(setting, options.eval);
  }
  auto score_of = [&](const Candidate& c) {
    if (sp.score) return sp.score(c.values);
    const auto program = dsl::parse(dsl::pretty_print(sp.param, *c.expr), sp.signature);
    return (*evaluator)(program).score;
  };

  SearchResult result;
  std::vector<Candidate> pool;
  std::unordered_set<std::uint64_t> seen;
  Candidate best;
  bool have_best = false;

  auto consider = [&](Candidate&& c, bool keep) {
    ++result.enumerated;
    if (result.enumerated > options.max_candidates) {
      throw SpaceTooLarge("enumeration exceeded " + std::to_string(options.max_candidates) +
                          " candidates");
    }
    if (!seen.insert(hash_values(c.values)).second) return;
    ++result.distinct;
    const double s = score_of(c);
    if (!have_best || s > result.best_score) {
      result.best_score = s;
      best = Candidate{c.expr, c.depth, {}};
      have_best = true;
    }
    if (keep) pool.push_back(std::move(c));
  };

  for (auto& c : sp.leaves) consider(std::move(c), true);
  const Op ops[] = {Op::Add, Op::Sub, Op::Mul, Op::Div};
  std::vector<double> buf;
  for (std::size_t level = 1; level <= options.depth; ++level) {
    const bool keep = level < options.depth;
    const std::size_t existing = pool.size();
    const std::size_t estimate = result.enumerated + 4 * existing * existing;
    if (estimate > options.max_candidates) {
      throw SpaceTooLarge("depth " + std::to_string(level) + " needs about " +
                          std::to_string(estimate) + " candidates, cap is " +
                          std::to_string(options.max_candidates));
    }
    if (level == 1) {
      for (auto& c : sp.unary) consider(std::move(c), keep);
    }
    for (std::size_t a = 0; a < existing; ++a) {
      for (std::size_t b = 0; b < existing; ++b) {
        if (std::max(pool[a].depth, pool[b].depth) + 1 != level) continue;
        for (Op op : ops) {
          if (!apply(op, pool[a].values, pool[b].values, buf)) continue;
          Candidate c{dsl::make_binary(to_bop(op), pool[a].expr, pool[b].expr), level, buf};
          consider(std::move(c), keep);
        }
      }
    }
  }

  if (have_best) {
    auto program = dsl::parse(dsl::pretty_print(sp.param, *best.expr), sp.signature);
    const auto report = eval::score(program, setting, options.eval);
    result.best_score = report.score;
    result.best = std::move(program);
  }
  return result;
}

}  // namespace amd::oracle
