#include <algorithm>

#include "amd/oracle.hpp"
#include "doctest.h"

using namespace amd;

namespace {

// Highest bidder wins and pays its own bid: not truthful.
mech::MechanismOutcome pay_your_bid(std::span<const double> bids) {
  mech::MechanismOutcome out;
  out.payments.assign(bids.size(), 0.0);
  out.redistribution.assign(bids.size(), 0.0);
  const std::size_t w = mech::argmax_slot(bids);
  out.winners = {w};
  out.payments[w] = bids[w];
  return out;
}

mech::MechanismOutcome second_price(std::span<const double> bids) {
  mech::MechanismOutcome out;
  const auto v = mech::vcg_unit_demand(bids, 1);
  out.winners = v.winners;
  out.payments = v.payments;
  out.redistribution.assign(bids.size(), 0.0);
  return out;
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("grid points") {
    CHECK(oracle::grid_points(0.25) == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(oracle::grid_points(0.05).size() == 21);
  }

  TEST_CASE("utility") {
    mech::MechanismOutcome o;
    o.winners = {1};
    o.payments = {0.0, 0.3};
    o.redistribution = {0.1, 0.05};
    CHECK(oracle::utility(o, 0, 0.9) == doctest::Approx(0.1));
    CHECK(oracle::utility(o, 1, 0.8) == doctest::Approx(0.55));
  }

  TEST_CASE("regret detects a non-truthful auction") {
    oracle::OutcomeCache bad(pay_your_bid);
    CHECK(oracle::regret_grid(bad, 2, 0.1, 0.1) > 0.1);
    oracle::OutcomeCache good(second_price);
    CHECK(oracle::regret_grid(good, 2, 0.1, 0.1) == doctest::Approx(0.0));
    CHECK(good.size() > 0);
  }

  TEST_CASE("wbb and IR checks detect violations") {
    oracle::OutcomeCache generous([](std::span<const double> bids) {
      auto out = second_price(bids);
      out.redistribution.assign(bids.size(), 0.5);
      return out;
    });
    CHECK(oracle::wbb_check(generous, 3, 0.25) > 0.0);

    oracle::OutcomeCache greedy([](std::span<const double> bids) {
      auto out = second_price(bids);
      out.redistribution.assign(bids.size(), -0.1);
      return out;
    });
    const auto ir = oracle::ir_feasibility_check(greedy, 3, 0.25, 1);
    CHECK(ir.min_redistribution < 0.0);
    CHECK(ir.min_truthful_utility < 0.0);

    oracle::OutcomeCache overalloc([](std::span<const double> bids) {
      auto out = second_price(bids);
      out.winners = {0, 1};
      return out;
    });
    CHECK_FALSE(oracle::ir_feasibility_check(overalloc, 3, 0.25, 1).feasible);
  }

  TEST_CASE("Cavallo passes every criterion") {
    const mech::SettingSpec s = mech::VcgRedistribution{};
    const auto p = dsl::parse("def h(others_bids): return 0.5 * min(others_bids)", mech::signature_for(s));
    const auto r = oracle::verify_program(p, s, 0.1, 0.1);
    CHECK(r.passes());
    CHECK(r.max_regret == doctest::Approx(0.0));
    CHECK(r.max_wbb_violation == doctest::Approx(0.0));
    CHECK(r.profiles == 11 * 11 * 11 * 11);
    const auto j = r.to_json();
    CHECK(j.at("grid").at("n_bidders") == 4);
  }

  TEST_CASE("an over-generous heuristic is repaired by the fix") {
    const mech::SettingSpec s = mech::VcgRedistribution{3, 1, dist::MarginalDistribution::uniform(), 21,
                                                        mech::ReverseFix::Off};
    const auto p = dsl::parse("def h(b): return sum(b)", mech::signature_for(s));
    const auto r = oracle::verify_program(p, s, 0.1, 0.1);
    CHECK(r.passes());
  }

  TEST_CASE("fixed single-item mechanisms are truthful") {
    const mech::SettingSpec s = mech::SingleItemRevenue{2, dist::correlated_grid(), 0.05};
    const auto p = dsl::parse("def h(bids): return [bids[0] * bids[1], 0.5 - bids[1], 0.2]",
                              mech::signature_for(s));
    CHECK(oracle::verify_program(p, s, 0.05, 0.05).passes());
  }

  TEST_CASE("memoize caches errors too") {
    int calls = 0;
    auto h = oracle::memoize([&](std::span<const double> x) -> double {
      ++calls;
      if (x[0] < 0) throw dsl::EvalError(dsl::EvalError::Kind::Domain, "negative");
      return x[0] * 2;
    });
    const std::vector<double> a{0.5};
    const std::vector<double> b{-1.0};
    CHECK(h(a) == 1.0);
    CHECK(h(a) == 1.0);
    CHECK_THROWS_AS(h(b), dsl::EvalError);
    CHECK_THROWS_AS(h(b), dsl::EvalError);
    CHECK(calls == 2);
  }

  TEST_CASE("exhaustive search dominates hand-picked members of its grammar") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    oracle::SearchOptions opt;
    opt.depth = 2;
    opt.eval = {1000, 3, false};
    const auto r = oracle::exhaustive_small_search(s, opt);
    REQUIRE(r.best.has_value());
    CHECK(r.distinct <= r.enumerated);
    for (const char* src : {"def h(v): return v - survival(v)", "def h(v): return v",
                            "def h(v): return cdf(v) - survival(v)", "def h(v): return v - 1"}) {
      const auto p = dsl::parse(src, mech::signature_for(s));
      CHECK(r.best_score >= eval::score(p, s, opt.eval).score - 1e-12);
    }
    CHECK(eval::score(*r.best, s, opt.eval).score == doctest::Approx(r.best_score));
  }

  TEST_CASE("exhaustive search refuses oversized spaces") {
    oracle::SearchOptions opt;
    opt.depth = 3;
    opt.max_candidates = 100;
    CHECK_THROWS_AS(oracle::exhaustive_small_search(mech::RediscoveryPerBidder{}, opt), oracle::SpaceTooLarge);
  }
}
