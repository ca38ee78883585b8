#include <algorithm>
#include <numeric>
#include <vector>

#include "amd/mechanisms.hpp"

namespace amd::mech {

namespace {

std::vector<double> others_sorted(std::span<const double> bids, std::size_t skip) {
  std::vector<double> out;
  out.reserve(bids.size() - 1);
  for (std::size_t j = 0; j < bids.size(); ++j) {
    if (j != skip) out.push_back(bids[j]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double floored_rebate(const RebateFn& h, std::span<const double> bids, std::size_t i) {
  return std::max(0.0, h(others_sorted(bids, i)));
}

double sum(std::span<const double> xs) { return std::accumulate(xs.begin(), xs.end(), 0.0); }

}  // namespace

VcgResult vcg_unit_demand(std::span<const double> bids, std::size_t n_items) {
  const std::size_t n = bids.size();
  if (n_items == 0 || n_items >= n) throw SettingError("n_items must satisfy 1 <= n_items < n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return bids[a] > bids[b]; });
  VcgResult out;
  out.payments.assign(n, 0.0);
  const double price = bids[order[n_items]];
  for (std::size_t k = 0; k < n_items; ++k) {
    out.winners.push_back(order[k]);
    out.payments[order[k]] = price;
  }
  std::sort(out.winners.begin(), out.winners.end());
  return out;
}

double vcg_payment_total(std::span<const double> bids, std::size_t n_items) {
  std::vector<double> tmp(bids.begin(), bids.end());
  auto nth = tmp.begin() + static_cast<std::ptrdiff_t>(n_items);
  std::nth_element(tmp.begin(), nth, tmp.end(), std::greater<>());
  return static_cast<double>(n_items) * *nth;
}

std::vector<double> redistribution_vector(const dsl::HeuristicProgram& program,
                                          std::span<const double> bids,
                                          const dist::MarginalDistribution* distribution) {
  std::vector<double> out(bids.size());
  for (std::size_t i = 0; i < bids.size(); ++i) {
    out[i] = dsl::eval_scalar(program, others_sorted(bids, i), distribution);
  }
  return out;
}

std::vector<double> waterfill(std::span<const double> redistribution, double payment_total) {
  std::vector<double> out(redistribution.begin(), redistribution.end());
  const std::size_t n = out.size();
  double overflow = sum(out) - payment_total;
  if (overflow < 0.0 || n == 0) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out[a] < out[b]; });
  for (std::size_t j = 0; j < n; ++j) {
    const double remaining = static_cast<double>(n - j);
    const double v = out[order[j]];
    // a tie (up to rounding) zeroes the entry instead of leaving dust
    if (v * remaining > overflow * (1.0 + 1e-12)) {
      const double cut = overflow / remaining;
      for (std::size_t k = j; k < n; ++k) out[order[k]] = std::max(0.0, out[order[k]] - cut);
      break;
    }
    overflow -= v;
    out[order[j]] = 0.0;
  }
  return out;
}

RebateFn rebate_fn(const dsl::HeuristicProgram& program,
                   const dist::MarginalDistribution* distribution) {
  return [&program, distribution](std::span<const double> others) {
    return dsl::eval_scalar(program, others, distribution);
  };
}

std::vector<double> sweep_points(std::span<const double> bids, std::size_t bidder,
                                 std::size_t grid_resolution) {
  if (grid_resolution < 2) throw SettingError("fix grid resolution must be at least 2");
  std::vector<double> pts;
  pts.reserve(grid_resolution + bids.size());
  const double steps = static_cast<double>(grid_resolution - 1);
  for (std::size_t k = 0; k < grid_resolution; ++k) pts.push_back(static_cast<double>(k) / steps);
  for (std::size_t j = 0; j < bids.size(); ++j) {
    if (j != bidder) pts.push_back(bids[j]);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

double max_fix_deduction(const RebateFn& h, std::span<const double> bids, std::size_t bidder,
                         std::size_t n_items, const FixOptions& options) {
  const std::size_t n = bids.size();
  std::vector<double> profile(bids.begin(), bids.end());
  std::vector<double> raw(n);
  raw[bidder] = floored_rebate(h, bids, bidder);
  double deduction = 0.0;
  for (double b : sweep_points(bids, bidder, options.grid_resolution)) {
    profile[bidder] = b;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != bidder) raw[j] = floored_rebate(h, profile, j);
    }
    const double payments = vcg_payment_total(profile, n_items);
    if (sum(raw) <= payments) continue;
    const auto fixed = waterfill(raw, payments);
    deduction = std::max(deduction, raw[bidder] - fixed[bidder]);
  }
  return deduction;
}

MechanismOutcome corrected_fix(const RebateFn& h, std::span<const double> bids,
                               std::size_t n_items, const FixOptions& options) {
  const std::size_t n = bids.size();
  VcgResult vcg = vcg_unit_demand(bids, n_items);
  MechanismOutcome out;
  out.winners = std::move(vcg.winners);
  out.payments = std::move(vcg.payments);
  out.redistribution.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = floored_rebate(h, bids, i);
    if (raw == 0.0) continue;
    const double d = max_fix_deduction(h, bids, i, n_items, options);
    out.redistribution[i] = std::max(0.0, raw - d);
  }
  return out;
}

MechanismOutcome corrected_fix(const dsl::HeuristicProgram& program, std::span<const double> bids,
                               std::size_t n_items, const FixOptions& options,
                               const dist::MarginalDistribution* distribution) {
  return corrected_fix(rebate_fn(program, distribution), bids, n_items, options);
}

MechanismOutcome reverse_waterfill(const MechanismOutcome& outcome, const RebateFn& h,
                                   std::span<const double> bids, std::size_t n_items,
                                   const FixOptions& options, ReverseFix aggregation) {
  if (aggregation == ReverseFix::Off) return outcome;
  const std::size_t n = bids.size();
  MechanismOutcome out = outcome;
  std::vector<double> profile(bids.begin(), bids.end());
  for (std::size_t i = 0; i < n; ++i) {
    bool first = true;
    double add = 0.0;
    for (double b : sweep_points(bids, i, options.grid_resolution)) {
      profile[i] = b;
      const MechanismOutcome at = corrected_fix(h, profile, n_items, options);
      const double share = std::max(0.0, at.revenue() - at.total_redistribution()) /
                           static_cast<double>(n);
      if (first) {
        add = share;
        first = false;
      } else {
        add = aggregation == ReverseFix::Max ? std::max(add, share) : std::min(add, share);
      }
    }
    profile[i] = bids[i];
    out.redistribution[i] += add;
  }
  return out;
}

MechanismOutcome reverse_waterfill(const MechanismOutcome& outcome,
                                   const dsl::HeuristicProgram& program,
                                   std::span<const double> bids, std::size_t n_items,
                                   const FixOptions& options, ReverseFix aggregation,
                                   const dist::MarginalDistribution* distribution) {
  return reverse_waterfill(outcome, rebate_fn(program, distribution), bids, n_items, options,
                           aggregation);
}

}  // namespace amd::mech
