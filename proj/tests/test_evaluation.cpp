#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <omp.h>

#include "amd/evaluation.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace amd;

namespace {

dsl::HeuristicProgram parse_for(const mech::SettingSpec& s, const std::string& src) {
  return dsl::parse(src, mech::signature_for(s));
}

// Direct simulation of the second-price auction with reserve 1/2, two
// uniform bidders; independent of the library sampler.
double myerson_uniform_oracle(std::size_t n, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = u(rng);
    const double b = u(rng);
    const double hi = std::max(a, b);
    const double lo = std::min(a, b);
    if (hi >= 0.5) total += std::max(lo, 0.5);
  }
  return total / static_cast<double>(n);
}

// Cavallo with n=4, m=2: bidder i receives 0.5 * min(b_-i).
double cavallo_oracle(std::size_t n, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double b[4];
    for (double& x : b) x = u(rng);
    for (int i = 0; i < 4; ++i) {
      double m = 1.0;
      for (int j = 0; j < 4; ++j) {
        if (j != i) m = std::min(m, b[j]);
      }
      total += 0.5 * m;
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("Myerson revenue matches the closed form and a direct simulation") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const auto p = parse_for(s, "def h(v): return v - (1 - cdf(v)) / pdf(v)");
    const auto r = eval::score(p, s, {100000, 1, false});
    CHECK_FALSE(r.rejected);
    CHECK(r.score == doctest::Approx(5.0 / 12.0).epsilon(0.02));
    CHECK(myerson_uniform_oracle(400000, 5) == doctest::Approx(5.0 / 12.0).epsilon(0.01));
    const auto m = eval::score_myerson(s, false, {100000, 1, false});
    CHECK(m.score == doctest::Approx(r.score).epsilon(0.01));
  }

  TEST_CASE("Cavallo expectation") {
    const mech::SettingSpec s = mech::VcgRedistribution{};
    const auto p = parse_for(s, "def h(others_bids): return 0.5 * min(others_bids)");
    const auto r = eval::score(p, s, {20000, 2, false});
    CHECK(r.score == doctest::Approx(0.5).epsilon(0.03));
    CHECK(cavallo_oracle(200000, 4) == doctest::Approx(0.5).epsilon(0.01));
    CHECK(r.standard_error > 0.0);
  }

  TEST_CASE("serial reference and parallel path agree bitwise") {
    const std::vector<std::pair<mech::SettingSpec, std::string>> cases = {
        {mech::RediscoveryPerBidder{}, "def h(v): return v - 0.45"},
        {mech::SingleItemRevenue{2, dist::correlated_grid(), mech::kDefaultEpsilon},
         "def h(bids): return [bids[0] - 0.4, bids[1] - 0.5, 0]"},
        {mech::VcgRedistribution{3, 1, dist::MarginalDistribution::uniform(), 21, mech::ReverseFix::Off},
         "def h(b): return 0.3 * max(b)"},
    };
    for (const auto& [setting, src] : cases) {
      const auto p = parse_for(setting, src);
      const auto batch = eval::draw_samples(setting, 400, 9);
      const auto a = eval::score_batch(p, setting, batch, true, eval::Mode::Parallel);
      const auto b = eval::score_batch(p, setting, batch, true, eval::Mode::Serial);
      CHECK(a.score == b.score);
      CHECK(a.trace == b.trace);
    }
  }

  TEST_CASE("scores do not depend on the thread count") {
    const mech::SettingSpec s = mech::VcgRedistribution{};
    const auto p = parse_for(s, "def h(b): return 0.2 * sum(b) - 0.1 * max(b)");
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto a = eval::score(p, s, {500, 3, false});
    omp_set_num_threads(4);
    const auto b = eval::score(p, s, {500, 3, false});
    omp_set_num_threads(threads);
    CHECK(a.score == b.score);
  }

  TEST_CASE("failing heuristics are rejected with a typed reason") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const auto p = parse_for(s, "def h(v): return 1 / (v - v)");
    const auto r = eval::score(p, s, {100, 0, false});
    CHECK(r.rejected);
    CHECK(r.score == eval::kRejectedScore);
    CHECK(r.rejection_reason.rfind("DomainError", 0) == 0);

    const auto q = parse_for(s, "def h(v): return log(v - 0.5)");
    const auto rq = eval::score(q, s, {100, 0, false});
    CHECK(rq.rejected);
  }

  TEST_CASE("default sample counts") {
    CHECK(eval::default_samples(mech::VcgRedistribution{}) == 3000);
    CHECK(eval::default_samples(mech::RediscoveryPerBidder{}) == 10000);
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const auto r = eval::score(parse_for(s, "def h(v): return v"), s, {0, 0, false});
    CHECK(r.n_samples == 10000);
  }

  TEST_CASE("evaluator reuses one batch") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const eval::Evaluator ev(s, {2000, 4, false});
    const auto p = parse_for(s, "def h(v): return v - 0.5");
    CHECK(ev(p).score == eval::score(p, s, {2000, 4, false}).score);
    CHECK(ev(p).score == ev(p).score);
    CHECK(ev.n_samples() == 2000);
  }

  TEST_CASE("multi-distribution evaluation is the unweighted mean") {
    const std::vector<mech::SettingSpec> settings = {
        mech::RediscoveryPerBidder{2, dist::MarginalDistribution::uniform(), mech::kDefaultEpsilon},
        mech::RediscoveryPerBidder{2, dist::MarginalDistribution::beta(2, 2), mech::kDefaultEpsilon}};
    const auto p = dsl::parse("def h(v): return v - 0.5", dsl::HeuristicSignature::per_bidder());
    const auto multi = eval::score_multi(p, settings, {1000, 7, false});
    const auto a = eval::score(p, settings[0], {1000, dist::derive_seed(7, 0), false});
    const auto b = eval::score(p, settings[1], {1000, dist::derive_seed(7, 1), false});
    CHECK(multi.score == doctest::Approx(0.5 * (a.score + b.score)));
    const eval::Evaluator ev(settings, {1000, 7, false});
    CHECK(ev(p).score == doctest::Approx(multi.score));
  }

  TEST_CASE("distillation scores the distance to the goal") {
    const auto inner = std::make_shared<const mech::SettingSpec>(mech::VcgRedistribution{});
    const auto goal = mech::GoalFunction::tabulate(3, 11, 0.0, 1.0,
                                                   [](std::span<const double> x) { return 0.5 * x[0]; });
    const mech::SettingSpec s = mech::Distillation{inner, goal, mech::Metric::L2, ""};
    const auto exact = parse_for(s, "def h(b): return 0.5 * b[0]");
    const auto off = parse_for(s, "def h(b): return 0.5 * b[0] + 0.1");
    const auto re = eval::score(exact, s, {500, 1, false});
    const auto ro = eval::score(off, s, {500, 1, false});
    CHECK(re.score == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ro.score == doctest::Approx(-0.01));
    const mech::SettingSpec l1 = mech::Distillation{inner, goal, mech::Metric::L1, ""};
    CHECK(eval::score(off, l1, {500, 1, false}).score == doctest::Approx(-0.1));
  }

  TEST_CASE("trace csv") {
    const mech::SettingSpec s = mech::RediscoveryPerBidder{};
    const auto r = eval::score(parse_for(s, "def h(v): return v - 0.5"), s, {5, 0, true});
    REQUIRE(r.trace.size() == 5);
    std::ostringstream out;
    eval::write_trace_csv(r, out);
    const std::string text = out.str();
    CHECK(text.rfind("sample_index,score_component\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  }

  TEST_CASE("single-item baselines on the grid") {
    const mech::SettingSpec s = mech::SingleItemRevenue{2, dist::correlated_grid(), mech::kDefaultEpsilon};
    const auto sig = parse_for(s,
                               "def h(bids):\n"
                               "  a1 = sigmoid(10 * (bids[0] - 0.5))\n"
                               "  a2 = sigmoid(10 * (bids[1] - 0.5))\n"
                               "  return [a1, a2, 1 - max(a1, a2)]\n");
    CHECK(eval::score(sig, s, {3000, 2, false}).score == doctest::Approx(0.3857).epsilon(0.05));
    CHECK(eval::score_myerson(s, true, {3000, 2, false}).score == doctest::Approx(0.3857).epsilon(0.05));
  }
}
