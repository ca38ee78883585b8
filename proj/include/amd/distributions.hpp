#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace amd::dist {

/// Raised for evaluations outside [0,1] or where a quantity is undefined
/// (e.g. a virtual valuation where the density vanishes).
class DistributionError : public std::domain_error {
 public:
  enum class Kind { OutOfSupport, Domain, Invalid };

  DistributionError(Kind kind, const std::string& what)
      : std::domain_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

struct Beta {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Density `densities[k]` on [breakpoints[k], breakpoints[k+1]).
struct PiecewiseUniform {
  std::vector<double> breakpoints;
  std::vector<double> densities;
};

/// One bidder's value distribution on [0,1].
class MarginalDistribution {
 public:
  using Variant = std::variant<Uniform, Beta, PiecewiseUniform>;

  static MarginalDistribution uniform(double lo = 0.0, double hi = 1.0);
  static MarginalDistribution beta(double alpha, double beta);
  static MarginalDistribution piecewise_uniform(std::vector<double> breakpoints,
                                                std::vector<double> densities);

  double pdf(double v) const;
  double cdf(double v) const;
  double survival(double v) const { return 1.0 - cdf(v); }
  /// Smallest v with cdf(v) >= p.
  double quantile(double p) const;

  double sample(std::mt19937_64& rng) const;

  const Variant& variant() const noexcept { return v_; }
  std::string id() const;

  nlohmann::json to_json() const;
  static MarginalDistribution from_json(const nlohmann::json& j);

 private:
  explicit MarginalDistribution(Variant v);

  Variant v_;
  double log_beta_norm_ = 0.0;   // log B(alpha, beta)
  std::vector<double> cum_mass_; // piecewise: mass below each breakpoint
};

/// Regularised incomplete beta I_x(a, b), continued fraction to 1e-10.
double regularized_incomplete_beta(double a, double b, double x);

/// Joint density on [0,1]^2 that is uniform within each cell of a square
/// grid. Row i is bidder 1's band [i*side, (i+1)*side), column j bidder 2's.
/// Cells are half-open except the last row/column.
class GridJointDistribution {
 public:
  GridJointDistribution(std::vector<std::vector<double>> cells, double side);

  static GridJointDistribution from_json(const nlohmann::json& j);
  static GridJointDistribution load(const std::string& path);
  nlohmann::json to_json() const;

  std::size_t size() const noexcept { return cells_.size(); }
  double side() const noexcept { return side_; }
  /// side^2 * sum of raw cells.
  double normalizer() const noexcept { return z_; }
  double raw_cell(std::size_t row, std::size_t col) const { return cells_.at(row).at(col); }

  std::size_t cell_index(double v) const;
  double pdf(double x, double y) const;
  /// Probability mass of cell (row, col) after normalisation.
  double cell_probability(std::size_t row, std::size_t col) const;
  /// Marginal of bidder 0 (rows) or bidder 1 (columns).
  MarginalDistribution marginal(std::size_t bidder) const;

  void sample_into(std::mt19937_64& rng, std::span<double> profile) const;

 private:
  std::vector<std::vector<double>> cells_;
  double side_;
  double z_;
  std::vector<double> cum_;
};

/// Cells of the 5x5 correlated distribution used for the two-bidder
/// revenue experiments (raw, unnormalised).
const std::vector<std::vector<double>>& correlated_grid_cells();
GridJointDistribution correlated_grid();

/// Either iid draws from one marginal, or a two-bidder joint grid.
using ValueModel = std::variant<MarginalDistribution, GridJointDistribution>;

std::string model_id(const ValueModel& model);
nlohmann::json model_to_json(const ValueModel& model);
/// Accepts a marginal spec, {"kind":"grid","cells":..,"side":..} or
/// {"kind":"grid","file":path}.
ValueModel model_from_json(const nlohmann::json& j);

struct SampleBatch {
  std::vector<double> values;  // row-major, batch_size x n_bidders
  std::size_t n_bidders = 0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::string distribution_id;

  std::span<const double> profile(std::size_t k) const {
    return {values.data() + k * n_bidders, n_bidders};
  }
};

/// Profiles are generated in blocks of `kSampleBlock`; block b draws from
/// mt19937_64(derive_seed(seed, b)), so the batch does not depend on how
/// blocks are scheduled across workers.
inline constexpr std::size_t kSampleBlock = 256;

std::uint64_t splitmix64(std::uint64_t x);
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ stream);
}

/// Uniform double in [0,1) from the top 53 bits.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

SampleBatch sample(const ValueModel& model, std::size_t n_bidders, std::size_t batch_size,
                   std::uint64_t seed);

/// v - survival(v)/pdf(v).
double virtual_valuation(const MarginalDistribution& dist, double v);

/// Ironed virtual valuation from the concave hull of R(q) = q F^{-1}(1-q).
/// Built once on a v-grid of `resolution` steps; evaluation is O(log k).
class IronedVirtualValuation {
 public:
  struct Interval {
    double v_lo;
    double v_hi;
    double value;
  };

  explicit IronedVirtualValuation(MarginalDistribution dist, std::size_t resolution = 10000);

  double operator()(double v) const;
  const std::vector<Interval>& intervals() const noexcept { return intervals_; }
  const MarginalDistribution& distribution() const noexcept { return dist_; }

 private:
  MarginalDistribution dist_;
  std::vector<Interval> intervals_;
};

double ironed_virtual_valuation(const MarginalDistribution& dist, double v);

}  // namespace amd::dist
