#include <algorithm>
#include <cmath>
#include <numeric>

#include <omp.h>

#include "amd/distributions.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace amd;
using dist::MarginalDistribution;

TEST_SUITE("distributions") {
  TEST_CASE("uniform") {
    const auto u = MarginalDistribution::uniform(0.2, 0.6);
    CHECK(u.pdf(0.4) == doctest::Approx(2.5));
    CHECK(u.pdf(0.1) == 0.0);
    CHECK(u.cdf(0.3) == doctest::Approx(0.25));
    CHECK(u.cdf(0.9) == 1.0);
    CHECK(u.survival(0.5) == doctest::Approx(0.25));
    CHECK(u.quantile(0.5) == doctest::Approx(0.4));
    CHECK_THROWS_AS(MarginalDistribution::uniform(0.5, 0.5), dist::DistributionError);
    CHECK_THROWS_AS(MarginalDistribution::uniform(-0.5, 0.5), dist::DistributionError);
  }

  TEST_CASE("beta against closed forms") {
    const auto b = MarginalDistribution::beta(2.0, 2.0);
    for (double x : {0.1, 0.35, 0.5, 0.8}) {
      CHECK(b.pdf(x) == doctest::Approx(6 * x * (1 - x)));
      CHECK(b.cdf(x) == doctest::Approx(3 * x * x - 2 * x * x * x).epsilon(1e-9));
      CHECK(b.cdf(b.quantile(b.cdf(x))) == doctest::Approx(b.cdf(x)).epsilon(1e-6));
    }
    for (double x : {0.05, 0.3, 0.9}) {
      CHECK(dist::regularized_incomplete_beta(1.0, 3.0, x) ==
            doctest::Approx(1 - std::pow(1 - x, 3)).epsilon(1e-9));
      CHECK(dist::regularized_incomplete_beta(4.0, 1.0, x) == doctest::Approx(std::pow(x, 4)).epsilon(1e-9));
    }
    CHECK_THROWS_AS(MarginalDistribution::beta(0.0, 1.0), dist::DistributionError);
  }

  TEST_CASE("piecewise uniform") {
    const auto p = MarginalDistribution::piecewise_uniform({0.0, 0.5, 1.0}, {1.5, 0.5});
    CHECK(p.pdf(0.25) == doctest::Approx(1.5));
    CHECK(p.pdf(0.75) == doctest::Approx(0.5));
    CHECK(p.cdf(0.5) == doctest::Approx(0.75));
    CHECK(p.cdf(0.75) == doctest::Approx(0.875));
    CHECK(p.quantile(0.875) == doctest::Approx(0.75));
    CHECK_THROWS_AS(MarginalDistribution::piecewise_uniform({0.0, 1.0}, {0.5}), dist::DistributionError);
  }

  TEST_CASE("json roundtrip of marginals") {
    for (const auto& m : {MarginalDistribution::uniform(0.1, 0.9), MarginalDistribution::beta(2, 5),
                          MarginalDistribution::piecewise_uniform({0, 0.3, 1}, {2, 4.0 / 7.0})}) {
      const auto back = MarginalDistribution::from_json(m.to_json());
      CHECK(back.id() == m.id());
      CHECK(back.cdf(0.4) == doctest::Approx(m.cdf(0.4)));
    }
  }

  TEST_CASE("grid distribution is normalised") {
    const auto g = dist::correlated_grid();
    CHECK(g.size() == 5);
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) total += g.cell_probability(i, j);
    }
    CHECK(total == doctest::Approx(1.0));
    double raw = 0.0;
    for (const auto& row : dist::correlated_grid_cells()) raw = std::accumulate(row.begin(), row.end(), raw);
    CHECK(g.normalizer() == doctest::Approx(0.04 * raw));
    CHECK(g.pdf(0.1, 0.1) == doctest::Approx(1.397 / g.normalizer()));
    CHECK(g.cell_index(0.2) == 1);
    CHECK(g.cell_index(1.0) == 4);
  }

  TEST_CASE("grid marginals integrate the joint density") {
    const auto g = dist::correlated_grid();
    const auto m0 = g.marginal(0);
    const auto m1 = g.marginal(1);
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      double col = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        row += g.cell_probability(i, j);
        col += g.cell_probability(j, i);
      }
      const double lo = 0.2 * static_cast<double>(i);
      CHECK(m0.cdf(lo + 0.2) - m0.cdf(lo) == doctest::Approx(row));
      CHECK(m1.cdf(lo + 0.2) - m1.cdf(lo) == doctest::Approx(col));
    }
  }

  TEST_CASE("grid rejects bad input") {
    CHECK_THROWS_AS(dist::GridJointDistribution({{1, 1}, {1}}, 0.5), dist::DistributionError);
    CHECK_THROWS_AS(dist::GridJointDistribution({{1, 1}, {1, 1}}, 0.2), dist::DistributionError);
    CHECK_THROWS_AS(dist::GridJointDistribution({{0, 0}, {0, 0}}, 0.5), dist::DistributionError);
    CHECK_THROWS_AS(dist::GridJointDistribution({{1, -1}, {1, 1}}, 0.5), dist::DistributionError);
  }

  TEST_CASE("value model json forms") {
    const auto a = dist::model_from_json({{"kind", "grid"}});
    CHECK(std::holds_alternative<dist::GridJointDistribution>(a));
    const auto b = dist::model_from_json(
        {{"kind", "grid"}, {"file", (test::source_dir() / "data/grid_correlated_5x5.json").string()}});
    CHECK(dist::model_id(a) == dist::model_id(b));
    const auto c = dist::model_from_json({{"kind", "beta"}, {"alpha", 2}, {"beta", 3}});
    CHECK(std::holds_alternative<MarginalDistribution>(c));
    CHECK(dist::model_id(dist::model_from_json(dist::model_to_json(c))) == dist::model_id(c));
  }

  TEST_CASE("sampling is deterministic and independent of thread count") {
    const dist::ValueModel u = MarginalDistribution::uniform();
    const auto a = dist::sample(u, 3, 1000, 42);
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto b = dist::sample(u, 3, 1000, 42);
    omp_set_num_threads(std::max(threads, 3));
    const auto c = dist::sample(u, 3, 1000, 42);
    omp_set_num_threads(threads);
    CHECK(a.values == b.values);
    CHECK(a.values == c.values);
    CHECK(a.values.size() == 3000);
    const auto d = dist::sample(u, 3, 1000, 43);
    CHECK(a.values != d.values);
    // a shorter batch is a prefix of a longer one
    const auto e = dist::sample(u, 3, 300, 42);
    CHECK(std::equal(e.values.begin(), e.values.end(), a.values.begin()));
  }

  TEST_CASE("sample moments") {
    const dist::ValueModel b = MarginalDistribution::beta(2.0, 5.0);
    const auto s = dist::sample(b, 1, 200000, 7);
    const double mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / 200000.0;
    CHECK(mean == doctest::Approx(2.0 / 7.0).epsilon(0.01));
    CHECK(std::all_of(s.values.begin(), s.values.end(), [](double x) { return x >= 0.0 && x <= 1.0; }));
  }

  TEST_CASE("grid sampling matches cell probabilities") {
    const auto g = dist::correlated_grid();
    const auto s = dist::sample(dist::ValueModel(g), 2, 200000, 9);
    std::vector<double> freq(25, 0.0);
    for (std::size_t k = 0; k < s.batch_size; ++k) {
      const auto p = s.profile(k);
      freq[g.cell_index(p[0]) * 5 + g.cell_index(p[1])] += 1.0 / 200000.0;
    }
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(freq[i * 5 + j] == doctest::Approx(g.cell_probability(i, j)).epsilon(0.06));
      }
    }
    CHECK_THROWS(dist::sample(dist::ValueModel(g), 3, 10, 1));
  }

  TEST_CASE("virtual valuation") {
    const auto u = MarginalDistribution::uniform();
    for (double v : {0.1, 0.5, 0.9}) CHECK(dist::virtual_valuation(u, v) == doctest::Approx(2 * v - 1));
    const auto b = MarginalDistribution::beta(2.0, 2.0);
    const double v = 0.3;
    CHECK(dist::virtual_valuation(b, v) == doctest::Approx(v - (1 - b.cdf(v)) / b.pdf(v)));
  }

  TEST_CASE("ironing leaves regular distributions alone") {
    const auto u = MarginalDistribution::uniform();
    const dist::IronedVirtualValuation iv(u);
    for (double v : {0.05, 0.3, 0.62, 0.97}) CHECK(iv(v) == doctest::Approx(2 * v - 1).epsilon(1e-3));
  }

  TEST_CASE("ironed virtual valuation is monotone") {
    // bimodal: the plain virtual valuation decreases across the gap
    const auto m = MarginalDistribution::piecewise_uniform({0, 0.3, 0.7, 1}, {2.5, 0.1, 0.7});
    bool plain_decreases = false;
    double prev_plain = -1e9;
    double prev = -1e9;
    const dist::IronedVirtualValuation iv(m);
    for (int k = 1; k < 1000; ++k) {
      const double v = k / 1000.0;
      const double plain = dist::virtual_valuation(m, v);
      if (plain < prev_plain - 1e-9) plain_decreases = true;
      prev_plain = plain;
      const double ironed = iv(v);
      CHECK(ironed >= prev - 1e-9);
      prev = ironed;
    }
    CHECK(plain_decreases);
    CHECK_FALSE(iv.intervals().empty());
  }
}
