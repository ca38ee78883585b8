#include "amd/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace amd::dist {

namespace {

void require_support(double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    std::ostringstream os;
    os << "value " << v << " outside support [0,1]";
    throw DistributionError(DistributionError::Kind::OutOfSupport, os.str());
  }
}

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

MarginalDistribution::MarginalDistribution(Variant v) : v_(std::move(v)) {}

MarginalDistribution MarginalDistribution::uniform(double lo, double hi) {
  if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) {
    throw DistributionError(DistributionError::Kind::Invalid,
                            "uniform bounds must satisfy 0 <= lo < hi <= 1");
  }
  return MarginalDistribution(Uniform{lo, hi});
}

MarginalDistribution MarginalDistribution::beta(double alpha, double beta) {
  if (!(alpha > 0.0 && beta > 0.0)) {
    throw DistributionError(DistributionError::Kind::Invalid, "beta parameters must be positive");
  }
  MarginalDistribution d(Beta{alpha, beta});
  d.log_beta_norm_ = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  return d;
}

MarginalDistribution MarginalDistribution::piecewise_uniform(std::vector<double> breakpoints,
                                                             std::vector<double> densities) {
  if (breakpoints.size() != densities.size() + 1 || densities.empty()) {
    throw DistributionError(DistributionError::Kind::Invalid,
                            "piecewise uniform needs one more breakpoint than densities");
  }
  if (breakpoints.front() != 0.0 || breakpoints.back() != 1.0) {
    throw DistributionError(DistributionError::Kind::Invalid,
                            "piecewise uniform breakpoints must span [0,1]");
  }
  std::vector<double> cum(breakpoints.size(), 0.0);
  for (std::size_t k = 0; k < densities.size(); ++k) {
    if (!(breakpoints[k + 1] > breakpoints[k]) || !(densities[k] >= 0.0)) {
      throw DistributionError(DistributionError::Kind::Invalid,
                              "breakpoints must increase and densities be nonnegative");
    }
    cum[k + 1] = cum[k] + densities[k] * (breakpoints[k + 1] - breakpoints[k]);
  }
  if (std::fabs(cum.back() - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "piecewise uniform mass is " << cum.back() << ", expected 1";
    throw DistributionError(DistributionError::Kind::Invalid, os.str());
  }
  MarginalDistribution d(PiecewiseUniform{std::move(breakpoints), std::move(densities)});
  d.cum_mass_ = std::move(cum);
  return d;
}

double MarginalDistribution::pdf(double v) const {
  require_support(v);
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    return (v >= u->lo && v <= u->hi) ? 1.0 / (u->hi - u->lo) : 0.0;
  }
  if (const auto* b = std::get_if<Beta>(&v_)) {
    if (v == 0.0) {
      if (b->alpha < 1.0) return std::numeric_limits<double>::infinity();
      if (b->alpha > 1.0) return 0.0;
      return std::exp(-log_beta_norm_);
    }
    if (v == 1.0) {
      if (b->beta < 1.0) return std::numeric_limits<double>::infinity();
      if (b->beta > 1.0) return 0.0;
      return std::exp(-log_beta_norm_);
    }
    return std::exp((b->alpha - 1.0) * std::log(v) + (b->beta - 1.0) * std::log1p(-v) -
                    log_beta_norm_);
  }
  const auto& p = std::get<PiecewiseUniform>(v_);
  auto it = std::upper_bound(p.breakpoints.begin(), p.breakpoints.end(), v);
  std::size_t k = static_cast<std::size_t>(it - p.breakpoints.begin());
  k = std::clamp<std::size_t>(k, 1, p.densities.size()) - 1;
  return p.densities[k];
}

double MarginalDistribution::cdf(double v) const {
  require_support(v);
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    if (v <= u->lo) return 0.0;
    if (v >= u->hi) return 1.0;
    return (v - u->lo) / (u->hi - u->lo);
  }
  if (const auto* b = std::get_if<Beta>(&v_)) {
    return regularized_incomplete_beta(b->alpha, b->beta, v);
  }
  const auto& p = std::get<PiecewiseUniform>(v_);
  auto it = std::upper_bound(p.breakpoints.begin(), p.breakpoints.end(), v);
  std::size_t k = static_cast<std::size_t>(it - p.breakpoints.begin());
  k = std::clamp<std::size_t>(k, 1, p.densities.size()) - 1;
  const double c = cum_mass_[k] + p.densities[k] * (v - p.breakpoints[k]);
  return std::min(c, 1.0);
}

double MarginalDistribution::quantile(double prob) const {
  if (!(prob >= 0.0 && prob <= 1.0)) {
    throw DistributionError(DistributionError::Kind::Domain, "quantile level outside [0,1]");
  }
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    return u->lo + prob * (u->hi - u->lo);
  }
  if (const auto* p = std::get_if<PiecewiseUniform>(&v_)) {
    for (std::size_t k = 0; k < p->densities.size(); ++k) {
      if (prob <= cum_mass_[k + 1] && p->densities[k] > 0.0) {
        const double v = p->breakpoints[k] + (prob - cum_mass_[k]) / p->densities[k];
        return std::clamp(v, p->breakpoints[k], p->breakpoints[k + 1]);
      }
    }
    return 1.0;
  }
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) >= prob) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double MarginalDistribution::sample(std::mt19937_64& rng) const {
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    return u->lo + (u->hi - u->lo) * unit_uniform(rng);
  }
  if (const auto* b = std::get_if<Beta>(&v_)) {
    std::gamma_distribution<double> ga(b->alpha, 1.0);
    std::gamma_distribution<double> gb(b->beta, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return (x + y) > 0.0 ? x / (x + y) : 0.5;
  }
  const auto& p = std::get<PiecewiseUniform>(v_);
  const double u = unit_uniform(rng);
  std::size_t k = 0;
  while (k + 1 < p.densities.size() && u >= cum_mass_[k + 1]) ++k;
  const double width = p.breakpoints[k + 1] - p.breakpoints[k];
  return p.breakpoints[k] + width * unit_uniform(rng);
}

std::string MarginalDistribution::id() const {
  std::ostringstream os;
  os.precision(17);
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    os << "uniform(" << u->lo << "," << u->hi << ")";
  } else if (const auto* b = std::get_if<Beta>(&v_)) {
    os << "beta(" << b->alpha << "," << b->beta << ")";
  } else {
    const auto& p = std::get<PiecewiseUniform>(v_);
    os << "piecewise(";
    for (std::size_t k = 0; k < p.densities.size(); ++k) os << (k ? "," : "") << p.densities[k];
    os << ")";
  }
  return os.str();
}

nlohmann::json MarginalDistribution::to_json() const {
  if (const auto* u = std::get_if<Uniform>(&v_)) {
    return {{"kind", "uniform"}, {"lo", u->lo}, {"hi", u->hi}};
  }
  if (const auto* b = std::get_if<Beta>(&v_)) {
    return {{"kind", "beta"}, {"alpha", b->alpha}, {"beta", b->beta}};
  }
  const auto& p = std::get<PiecewiseUniform>(v_);
  return {{"kind", "piecewise_uniform"}, {"breakpoints", p.breakpoints}, {"densities", p.densities}};
}

MarginalDistribution MarginalDistribution::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") {
    return uniform(j.value("lo", 0.0), j.value("hi", 1.0));
  }
  if (kind == "beta") {
    return beta(j.at("alpha").get<double>(), j.at("beta").get<double>());
  }
  if (kind == "piecewise_uniform") {
    return piecewise_uniform(j.at("breakpoints").get<std::vector<double>>(),
                             j.at("densities").get<std::vector<double>>());
  }
  throw DistributionError(DistributionError::Kind::Invalid, "unknown marginal kind '" + kind + "'");
}

double virtual_valuation(const MarginalDistribution& dist, double v) {
  const double f = dist.pdf(v);
  if (!(f > 0.0) || !std::isfinite(f)) {
    std::ostringstream os;
    os << "virtual valuation undefined at v=" << v << " (pdf=" << f << ")";
    throw DistributionError(DistributionError::Kind::Domain, os.str());
  }
  return v - dist.survival(v) / f;
}

}  // namespace amd::dist
