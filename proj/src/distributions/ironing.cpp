#include "amd/distributions.hpp"

#include <algorithm>
#include <cmath>

namespace amd::dist {

namespace {

struct HullPoint {
  double q;
  double r;
  std::size_t k;
};

// > 0 when c lies strictly above the line a->b.
double cross(const HullPoint& a, const HullPoint& b, const HullPoint& c) {
  return (b.q - a.q) * (c.r - a.r) - (b.r - a.r) * (c.q - a.q);
}

}  // namespace

IronedVirtualValuation::IronedVirtualValuation(MarginalDistribution dist, std::size_t resolution)
    : dist_(std::move(dist)) {
  if (resolution < 2) {
    throw DistributionError(DistributionError::Kind::Domain, "ironing resolution too small");
  }
  const double kd = static_cast<double>(resolution);
  std::vector<HullPoint> pts;
  pts.reserve(resolution + 1);
  for (std::size_t i = 0; i <= resolution; ++i) {
    const std::size_t k = resolution - i;
    const double v = static_cast<double>(k) / kd;
    const double q = dist_.survival(v);
    pts.push_back({q, q * v, k});
  }
  if (!(pts.back().q - pts.front().q > 0.0)) {
    throw DistributionError(DistributionError::Kind::Domain, "degenerate support for ironing");
  }

  std::vector<HullPoint> hull;
  for (const auto& p : pts) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) >= 0.0) {
      hull.pop_back();
    }
    hull.push_back(p);
  }

  // Hull edges that skip grid points with a visible gap are ironed.
  constexpr double kGapTol = 1e-12;
  for (std::size_t e = 0; e + 1 < hull.size(); ++e) {
    const HullPoint& a = hull[e];      // larger v
    const HullPoint& b = hull[e + 1];  // smaller v
    if (a.k - b.k < 2 || !(b.q > a.q)) continue;
    const double slope = (b.r - a.r) / (b.q - a.q);
    double gap = 0.0;
    for (std::size_t k = b.k + 1; k < a.k; ++k) {
      const HullPoint& p = pts[resolution - k];
      const double chord = a.r + slope * (p.q - a.q);
      gap = std::max(gap, chord - p.r);
    }
    if (gap > kGapTol) {
      intervals_.push_back({static_cast<double>(b.k) / kd, static_cast<double>(a.k) / kd, slope});
    }
  }
  std::sort(intervals_.begin(), intervals_.end(),
            [](const Interval& x, const Interval& y) { return x.v_lo < y.v_lo; });
}

double IronedVirtualValuation::operator()(double v) const {
  // First interval whose left end is >= v; intervals are disjoint and sorted.
  auto next = std::lower_bound(intervals_.begin(), intervals_.end(), v,
                               [](const Interval& iv, double x) { return iv.v_lo < x; });
  if (next != intervals_.begin()) {
    const Interval& prev = *(next - 1);
    if (v < prev.v_hi) return prev.value;
  }
  double phi = virtual_valuation(dist_, v);
  // Outside ironed intervals the revenue curve is concave, so phi already
  // lies between the neighbouring ironed values; the clamp removes
  // discretisation noise at interval ends.
  if (next != intervals_.begin()) phi = std::max(phi, (next - 1)->value);
  if (next != intervals_.end()) phi = std::min(phi, next->value);
  return phi;
}

double ironed_virtual_valuation(const MarginalDistribution& dist, double v) {
  return IronedVirtualValuation(dist)(v);
}

}  // namespace amd::dist
