#pragma once

// Auction settings, outcome computation and the fixing processes that turn an
// arbitrary heuristic into a feasible, IR, SP (and for redistribution, WBB)
// mechanism.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "amd/distributions.hpp"
#include "amd/dsl.hpp"
#include "json.hpp"

namespace amd::mech {

inline constexpr double kDefaultEpsilon = 0.001;
inline constexpr std::size_t kDefaultFixGrid = 101;

enum class ReverseFix { Off, Max, Min };
enum class Metric { L1, L2 };

std::string to_string(ReverseFix r);
std::string to_string(Metric m);
ReverseFix reverse_fix_from_string(const std::string& s);
Metric metric_from_string(const std::string& s);

class SettingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tabulated target for distillation. Values are stored row-major with the
/// last dimension varying fastest; evaluation is multilinear and clamps
/// inputs to the grid's bounding box.
class GoalFunction {
 public:
  GoalFunction(std::vector<std::vector<double>> grid, std::vector<double> values,
               std::optional<Metric> metric_hint = std::nullopt);

  static GoalFunction from_json(const nlohmann::json& j);
  static GoalFunction load(const std::string& path);
  nlohmann::json to_json() const;
  void save(const std::string& path) const;

  /// Tabulates `f` on `points` equally spaced values of [lo, hi] per axis.
  static GoalFunction tabulate(std::size_t dims, std::size_t points, double lo, double hi,
                               const std::function<double(std::span<const double>)>& f);

  std::size_t dimensions() const noexcept { return grid_.size(); }
  const std::vector<std::vector<double>>& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::optional<Metric> metric_hint() const noexcept { return metric_hint_; }

  double operator()(std::span<const double> x) const;

 private:
  std::vector<std::vector<double>> grid_;
  std::vector<double> values_;
  std::vector<std::size_t> strides_;
  std::optional<Metric> metric_hint_;
};

struct SingleItemRevenue {
  std::size_t n_bidders = 2;
  dist::ValueModel distribution = dist::MarginalDistribution::uniform();
  double epsilon = kDefaultEpsilon;
};

struct RediscoveryPerBidder {
  std::size_t n_bidders = 2;
  dist::MarginalDistribution distribution = dist::MarginalDistribution::uniform();
  double epsilon = kDefaultEpsilon;
};

struct VcgRedistribution {
  std::size_t n_bidders = 4;
  std::size_t n_items = 2;
  dist::MarginalDistribution distribution = dist::MarginalDistribution::uniform();
  std::size_t fix_grid_resolution = kDefaultFixGrid;
  ReverseFix reverse_fix = ReverseFix::Off;
};

struct SettingSpec;

/// Scores a program by its distance to `goal` on the inputs the inner
/// setting would feed it. Only scalar-output inner settings are supported.
struct Distillation {
  std::shared_ptr<const SettingSpec> inner;
  GoalFunction goal;
  Metric metric = Metric::L2;
  std::string goal_path;  // recorded for persistence when loaded from a file
};

struct SettingSpec
    : std::variant<SingleItemRevenue, RediscoveryPerBidder, VcgRedistribution, Distillation> {
  using variant::variant;
};

/// Throws SettingError on violated invariants (epsilon <= 0, m >= n, ...).
void validate(const SettingSpec& s);
dsl::HeuristicSignature signature_for(const SettingSpec& s);
std::size_t n_bidders(const SettingSpec& s);
std::string setting_kind(const SettingSpec& s);
/// The marginal bound to pdf/cdf/survival, if any.
const dist::MarginalDistribution* bound_marginal(const SettingSpec& s);

/// `base_dir` resolves relative goal/grid file paths.
SettingSpec setting_from_json(const nlohmann::json& j, const std::string& base_dir = "");
nlohmann::json setting_to_json(const SettingSpec& s);

struct MechanismOutcome {
  std::vector<std::size_t> winners;
  std::vector<double> payments;
  std::vector<double> redistribution;

  double revenue() const;
  double total_redistribution() const;
};

/// Argmax over an allocation vector; ties go to the lowest index.
std::size_t argmax_slot(std::span<const double> allocation);

/// Slot chosen by the heuristic for a profile (n = no sale). Per-bidder
/// programs are wrapped with adapt_per_bidder.
using AllocationRule = std::function<std::size_t(std::span<const double>)>;
AllocationRule allocation_rule(const dsl::HeuristicProgram& program,
                               const dist::MarginalDistribution* distribution = nullptr);

/// Number of grid steps K with epsilon = 1/K.
std::size_t grid_steps(double epsilon);

/// Smallest price p on {0, 1/K, ..., 1} such that the winner keeps winning
/// at every grid bid >= p (others fixed). nullopt if the winner loses at 1.
std::optional<double> critical_price(const AllocationRule& rule, std::span<const double> bids,
                                     std::size_t winner, double epsilon);
std::optional<double> critical_price(const dsl::HeuristicProgram& program,
                                     std::span<const double> bids, std::size_t winner,
                                     double epsilon,
                                     const dist::MarginalDistribution* distribution = nullptr);

MechanismOutcome solve_single_item(const AllocationRule& rule, std::span<const double> bids,
                                   double epsilon);
MechanismOutcome solve_single_item(const dsl::HeuristicProgram& program,
                                   std::span<const double> bids, double epsilon,
                                   const dist::MarginalDistribution* distribution = nullptr);

/// [h(b_1), ..., h(b_n), 0]
std::vector<double> adapt_per_bidder(const dsl::HeuristicProgram& program,
                                     std::span<const double> bids,
                                     const dist::MarginalDistribution* distribution = nullptr);

struct VcgResult {
  std::vector<std::size_t> winners;
  std::vector<double> payments;
};

/// m highest bidders win (lower index on ties) and each pays the (m+1)-th
/// highest bid.
VcgResult vcg_unit_demand(std::span<const double> bids, std::size_t n_items);
/// Sum of VCG payments, without building the result vectors.
double vcg_payment_total(std::span<const double> bids, std::size_t n_items);

/// Component i = program(sorted b_{-i}).
std::vector<double> redistribution_vector(const dsl::HeuristicProgram& program,
                                          std::span<const double> bids,
                                          const dist::MarginalDistribution* distribution = nullptr);

/// Overflow removal by waterfilling: if the redistribution exceeds the
/// payment total, the smallest entries are zeroed and a uniform amount is
/// subtracted from the rest so that the total matches exactly.
std::vector<double> waterfill(std::span<const double> redistribution, double payment_total);

struct FixOptions {
  std::size_t grid_resolution = kDefaultFixGrid;
};

/// Raw heuristic value for one bidder given the others' bids (unsorted).
using RebateFn = std::function<double(std::span<const double> others_sorted)>;
RebateFn rebate_fn(const dsl::HeuristicProgram& program,
                   const dist::MarginalDistribution* distribution = nullptr);

/// Max over the sweep set of bidder i's waterfilling deduction when b_i is
/// replaced; depends on b_{-i} only.
double max_fix_deduction(const RebateFn& h, std::span<const double> bids, std::size_t bidder,
                         std::size_t n_items, const FixOptions& options);

/// Own-bid independent corrected fix: redistribution_i = max(0, h(b_{-i}) - D_i).
MechanismOutcome corrected_fix(const RebateFn& h, std::span<const double> bids,
                               std::size_t n_items, const FixOptions& options);
MechanismOutcome corrected_fix(const dsl::HeuristicProgram& program, std::span<const double> bids,
                               std::size_t n_items, const FixOptions& options = {},
                               const dist::MarginalDistribution* distribution = nullptr);

/// Adds back the aggregated (max or min) per-bidder share of the surplus
/// left by corrected_fix, swept over the bidder's own bid.
MechanismOutcome reverse_waterfill(const MechanismOutcome& outcome, const RebateFn& h,
                                   std::span<const double> bids, std::size_t n_items,
                                   const FixOptions& options, ReverseFix aggregation);
MechanismOutcome reverse_waterfill(const MechanismOutcome& outcome,
                                   const dsl::HeuristicProgram& program,
                                   std::span<const double> bids, std::size_t n_items,
                                   const FixOptions& options, ReverseFix aggregation,
                                   const dist::MarginalDistribution* distribution = nullptr);

/// Grid used by the fix sweeps: {k/(G-1)} plus the other bidders' bids.
std::vector<double> sweep_points(std::span<const double> bids, std::size_t bidder,
                                 std::size_t grid_resolution);

/// Myerson's auction with one (optionally ironed) virtual valuation per
/// bidder. Winner = highest virtual value if it is >= 0 (lowest index on
/// ties); the winner pays the infimum bid at which it would still win.
class MyersonAuction {
 public:
  MyersonAuction(std::vector<dist::MarginalDistribution> marginals, bool ironed,
                 std::size_t ironing_resolution = 10000);

  /// Marginals taken from a value model (iid: repeated n times).
  static MyersonAuction for_model(const dist::ValueModel& model, std::size_t n_bidders,
                                  bool ironed);

  double virtual_value(std::size_t bidder, double v) const;
  MechanismOutcome operator()(std::span<const double> bids) const;
  std::size_t n_bidders() const noexcept { return marginals_.size(); }
  bool ironed() const noexcept { return !ironing_.empty(); }

 private:
  std::vector<dist::MarginalDistribution> marginals_;
  std::vector<dist::IronedVirtualValuation> ironing_;
};

MechanismOutcome myerson_optimal(const dist::MarginalDistribution& distribution,
                                 std::span<const double> bids, bool ironed);

}  // namespace amd::mech
