#include <algorithm>
#include <cmath>
#include <vector>

#include "amd/mechanisms.hpp"

namespace amd::mech {

std::size_t argmax_slot(std::span<const double> allocation) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < allocation.size(); ++i) {
    if (allocation[i] > allocation[best]) best = i;
  }
  return best;
}

std::vector<double> adapt_per_bidder(const dsl::HeuristicProgram& program,
                                     std::span<const double> bids,
                                     const dist::MarginalDistribution* distribution) {
  std::vector<double> out(bids.size() + 1, 0.0);
  for (std::size_t i = 0; i < bids.size(); ++i) {
    out[i] = dsl::eval_scalar(program, bids[i], distribution);
  }
  return out;
}

AllocationRule allocation_rule(const dsl::HeuristicProgram& program,
                               const dist::MarginalDistribution* distribution) {
  if (program.signature().kind == dsl::SignatureKind::PerBidderScore) {
    return [&program, distribution](std::span<const double> bids) {
      return argmax_slot(adapt_per_bidder(program, bids, distribution));
    };
  }
  if (program.signature().kind != dsl::SignatureKind::JointAllocation) {
    throw SettingError("allocation rules need a joint or per-bidder heuristic");
  }
  return [&program, distribution](std::span<const double> bids) {
    return argmax_slot(dsl::eval_vector(program, bids, distribution));
  };
}

std::size_t grid_steps(double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1.0) throw SettingError("epsilon must be in (0, 1]");
  return static_cast<std::size_t>(std::max(1.0, std::round(1.0 / epsilon)));
}

std::optional<double> critical_price(const AllocationRule& rule, std::span<const double> bids,
                                     std::size_t winner, double epsilon) {
  const std::size_t steps = grid_steps(epsilon);
  const double kd = static_cast<double>(steps);
  std::vector<double> probe(bids.begin(), bids.end());
  for (std::size_t k = steps + 1; k-- > 0;) {
    probe[winner] = static_cast<double>(k) / kd;
    if (rule(probe) != winner) {
      if (k == steps) return std::nullopt;
      return static_cast<double>(k + 1) / kd;
    }
  }
  return 0.0;
}

std::optional<double> critical_price(const dsl::HeuristicProgram& program,
                                     std::span<const double> bids, std::size_t winner,
                                     double epsilon,
                                     const dist::MarginalDistribution* distribution) {
  return critical_price(allocation_rule(program, distribution), bids, winner, epsilon);
}

MechanismOutcome solve_single_item(const AllocationRule& rule, std::span<const double> bids,
                                   double epsilon) {
  MechanismOutcome out;
  out.payments.assign(bids.size(), 0.0);
  out.redistribution.assign(bids.size(), 0.0);
  const std::size_t slot = rule(bids);
  if (slot >= bids.size()) return out;
  const auto price = critical_price(rule, bids, slot, epsilon);
  if (!price || *price > bids[slot]) return out;
  out.winners.push_back(slot);
  out.payments[slot] = *price;
  return out;
}

MechanismOutcome solve_single_item(const dsl::HeuristicProgram& program,
                                   std::span<const double> bids, double epsilon,
                                   const dist::MarginalDistribution* distribution) {
  return solve_single_item(allocation_rule(program, distribution), bids, epsilon);
}

// ---------------------------------------------------------------------------
// Myerson

MyersonAuction::MyersonAuction(std::vector<dist::MarginalDistribution> marginals, bool ironed,
                               std::size_t ironing_resolution)
    : marginals_(std::move(marginals)) {
  if (marginals_.empty()) throw SettingError("Myerson auction needs at least one bidder");
  if (ironed) {
    ironing_.reserve(marginals_.size());
    for (const auto& m : marginals_) ironing_.emplace_back(m, ironing_resolution);
  }
}

MyersonAuction MyersonAuction::for_model(const dist::ValueModel& model, std::size_t n_bidders,
                                         bool ironed) {
  std::vector<dist::MarginalDistribution> marginals;
  if (const auto* g = std::get_if<dist::GridJointDistribution>(&model)) {
    if (n_bidders != 2) throw SettingError("the grid distribution requires exactly 2 bidders");
    marginals = {g->marginal(0), g->marginal(1)};
  } else {
    marginals.assign(n_bidders, std::get<dist::MarginalDistribution>(model));
  }
  return MyersonAuction(std::move(marginals), ironed);
}

double MyersonAuction::virtual_value(std::size_t bidder, double v) const {
  if (!ironing_.empty()) return ironing_[bidder](v);
  return dist::virtual_valuation(marginals_[bidder], v);
}

MechanismOutcome MyersonAuction::operator()(std::span<const double> bids) const {
  const std::size_t n = bids.size();
  if (n != marginals_.size()) throw SettingError("bid vector length does not match bidders");
  MechanismOutcome out;
  out.payments.assign(n, 0.0);
  out.redistribution.assign(n, 0.0);

  std::vector<double> phi(n);
  for (std::size_t i = 0; i < n; ++i) phi[i] = virtual_value(i, bids[i]);
  const std::size_t w = argmax_slot(phi);
  if (phi[w] < 0.0) return out;

  auto wins = [&](double b) {
    const double x = virtual_value(w, b);
    if (x < 0.0) return false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == w) continue;
      if (j < w ? !(x > phi[j]) : !(x >= phi[j])) return false;
    }
    return true;
  };
  double lo = 0.0;
  double hi = bids[w];
  if (wins(lo)) {
    hi = lo;
  } else {
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (wins(mid) ? hi : lo) = mid;
    }
  }
  out.winners.push_back(w);
  out.payments[w] = hi;
  return out;
}

MechanismOutcome myerson_optimal(const dist::MarginalDistribution& distribution,
                                 std::span<const double> bids, bool ironed) {
  MyersonAuction auction(std::vector<dist::MarginalDistribution>(bids.size(), distribution), ironed);
  return auction(bids);
}

}  // namespace amd::mech
