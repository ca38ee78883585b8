#include "amd/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amd::dist {

const std::vector<std::vector<double>>& correlated_grid_cells() {
  static const std::vector<std::vector<double>> cells = {
      {1.397, 1.168, 1.428, 1.043, 0.751},
      {0.694, 1.085, 0.969, 1.083, 1.034},
      {1.403, 0.641, 1.424, 1.225, 1.328},
      {1.582, 0.744, 1.298, 0.158, 0.142},
      {1.272, 1.117, 0.557, 0.513, 0.946},
  };
  return cells;
}

GridJointDistribution correlated_grid() { return GridJointDistribution(correlated_grid_cells(), 0.2); }

GridJointDistribution::GridJointDistribution(std::vector<std::vector<double>> cells, double side)
    : cells_(std::move(cells)), side_(side), z_(0.0) {
  const std::size_t k = cells_.size();
  if (k == 0) {
    throw DistributionError(DistributionError::Kind::Invalid, "grid needs at least one cell");
  }
  if (std::fabs(side_ * static_cast<double>(k) - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "grid side " << side_ << " does not tile [0,1] with " << k << " cells";
    throw DistributionError(DistributionError::Kind::Invalid, os.str());
  }
  double total = 0.0;
  for (const auto& row : cells_) {
    if (row.size() != k) {
      throw DistributionError(DistributionError::Kind::Invalid, "grid must be square");
    }
    for (double c : row) {
      if (!(c >= 0.0) || !std::isfinite(c)) {
        throw DistributionError(DistributionError::Kind::Invalid, "grid cells must be nonnegative");
      }
      total += c;
    }
  }
  if (!(total > 0.0)) {
    throw DistributionError(DistributionError::Kind::Invalid, "grid has zero mass");
  }
  z_ = side_ * side_ * total;
  cum_.reserve(k * k + 1);
  cum_.push_back(0.0);
  double acc = 0.0;
  for (const auto& row : cells_) {
    for (double c : row) {
      acc += c;
      cum_.push_back(acc / total);
    }
  }
  cum_.back() = 1.0;
}

GridJointDistribution GridJointDistribution::from_json(const nlohmann::json& j) {
  return GridJointDistribution(j.at("cells").get<std::vector<std::vector<double>>>(),
                               j.value("side", 0.2));
}

GridJointDistribution GridJointDistribution::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DistributionError(DistributionError::Kind::Invalid, "cannot open grid file " + path);
  }
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json GridJointDistribution::to_json() const {
  return {{"cells", cells_}, {"side", side_}};
}

std::size_t GridJointDistribution::cell_index(double v) const {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw DistributionError(DistributionError::Kind::OutOfSupport, "grid coordinate outside [0,1]");
  }
  const auto k = cells_.size();
  const auto idx = static_cast<std::size_t>(std::floor(v * static_cast<double>(k)));
  return std::min(idx, k - 1);
}

double GridJointDistribution::pdf(double x, double y) const {
  return cells_[cell_index(x)][cell_index(y)] / z_;
}

double GridJointDistribution::cell_probability(std::size_t row, std::size_t col) const {
  return cells_.at(row).at(col) * side_ * side_ / z_;
}

MarginalDistribution GridJointDistribution::marginal(std::size_t bidder) const {
  if (bidder > 1) {
    throw DistributionError(DistributionError::Kind::Invalid, "grid distribution has two bidders");
  }
  const std::size_t k = cells_.size();
  std::vector<double> breakpoints(k + 1);
  for (std::size_t i = 0; i <= k; ++i) {
    breakpoints[i] = static_cast<double>(i) / static_cast<double>(k);
  }
  std::vector<double> densities(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double c = bidder == 0 ? cells_[i][j] : cells_[j][i];
      densities[i] += c * side_;
    }
    densities[i] /= z_;
  }
  return MarginalDistribution::piecewise_uniform(std::move(breakpoints), std::move(densities));
}

void GridJointDistribution::sample_into(std::mt19937_64& rng, std::span<double> profile) const {
  if (profile.size() != 2) {
    throw DistributionError(DistributionError::Kind::Invalid,
                            "grid distribution samples exactly two bidders");
  }
  const double u = unit_uniform(rng);
  auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
  std::size_t cell = static_cast<std::size_t>(it - cum_.begin());
  cell = std::clamp<std::size_t>(cell, 1, cum_.size() - 1) - 1;
  const std::size_t k = cells_.size();
  const std::size_t row = cell / k;
  const std::size_t col = cell % k;
  profile[0] = (static_cast<double>(row) + unit_uniform(rng)) * side_;
  profile[1] = (static_cast<double>(col) + unit_uniform(rng)) * side_;
}

}  // namespace amd::dist
