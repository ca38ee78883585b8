#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "amd/mechanisms.hpp"

namespace amd::mech {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw SettingError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) throw SettingError("unknown key '" + key + "' in " + where);
  }
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (base_dir.empty() || path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).string();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json distribution_json(const json& d, const std::string& base_dir) {
  json out = d;
  if (out.is_object() && out.contains("file")) {
    out["file"] = resolve(out["file"].get<std::string>(), base_dir);
  }
  return out;
}

void flatten(const json& node, std::size_t depth, const std::vector<std::vector<double>>& grid,
             std::vector<double>& out) {
  if (depth == grid.size()) {
    if (!node.is_number()) throw SettingError("goal values nesting does not match the grid");
    out.push_back(node.get<double>());
    return;
  }
  if (!node.is_array() || node.size() != grid[depth].size()) {
    throw SettingError("goal values shape does not match grid at dimension " +
                       std::to_string(depth));
  }
  for (const auto& child : node) flatten(child, depth + 1, grid, out);
}

json nest(const std::vector<double>& values, const std::vector<std::vector<double>>& grid,
          std::size_t depth, std::size_t& pos) {
  if (depth == grid.size()) return values[pos++];
  json arr = json::array();
  for (std::size_t i = 0; i < grid[depth].size(); ++i) arr.push_back(nest(values, grid, depth + 1, pos));
  return arr;
}

}  // namespace

std::string to_string(ReverseFix r) {
  switch (r) {
    case ReverseFix::Off: return "off";
    case ReverseFix::Max: return "max";
    case ReverseFix::Min: return "min";
  }
  return "off";
}

std::string to_string(Metric m) { return m == Metric::L1 ? "L1" : "L2"; }

ReverseFix reverse_fix_from_string(const std::string& s) {
  if (s == "off") return ReverseFix::Off;
  if (s == "max") return ReverseFix::Max;
  if (s == "min") return ReverseFix::Min;
  throw SettingError("reverse_fix must be one of off|max|min, got '" + s + "'");
}

Metric metric_from_string(const std::string& s) {
  if (s == "L1" || s == "l1") return Metric::L1;
  if (s == "L2" || s == "l2") return Metric::L2;
  throw SettingError("metric must be L1 or L2, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// GoalFunction

GoalFunction::GoalFunction(std::vector<std::vector<double>> grid, std::vector<double> values,
                           std::optional<Metric> metric_hint)
    : grid_(std::move(grid)), values_(std::move(values)), metric_hint_(metric_hint) {
  if (grid_.empty()) throw SettingError("goal function needs at least one dimension");
  std::size_t total = 1;
  for (const auto& axis : grid_) {
    if (axis.empty()) throw SettingError("goal grid axis is empty");
    for (std::size_t i = 1; i < axis.size(); ++i) {
      if (!(axis[i] > axis[i - 1])) throw SettingError("goal grid axis must be strictly increasing");
    }
    total *= axis.size();
  }
  if (values_.size() != total) {
    throw SettingError("goal table has " + std::to_string(values_.size()) + " values, grid needs " +
                       std::to_string(total));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw SettingError("goal table contains a non-finite value");
  }
  strides_.assign(grid_.size(), 1);
  for (std::size_t d = grid_.size() - 1; d > 0; --d) strides_[d - 1] = strides_[d] * grid_[d].size();
}

GoalFunction GoalFunction::from_json(const json& j) {
  reject_unknown(j, {"grid", "values", "metric_hint"}, "goal function");
  auto grid = j.at("grid").get<std::vector<std::vector<double>>>();
  std::vector<double> values;
  flatten(j.at("values"), 0, grid, values);
  std::optional<Metric> hint;
  if (j.contains("metric_hint") && !j.at("metric_hint").is_null()) {
    hint = metric_from_string(j.at("metric_hint").get<std::string>());
  }
  return GoalFunction(std::move(grid), std::move(values), hint);
}

GoalFunction GoalFunction::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SettingError("cannot open goal function file '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw SettingError("malformed goal function file '" + path + "': " + e.what());
  }
}

json GoalFunction::to_json() const {
  std::size_t pos = 0;
  json j;
  j["grid"] = grid_;
  j["values"] = nest(values_, grid_, 0, pos);
  if (metric_hint_) j["metric_hint"] = mech::to_string(*metric_hint_);
  return j;
}

void GoalFunction::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw SettingError("cannot write goal function file '" + path + "'");
  out << to_json().dump() << "\n";
}

GoalFunction GoalFunction::tabulate(std::size_t dims, std::size_t points, double lo, double hi,
                                    const std::function<double(std::span<const double>)>& f) {
  if (dims == 0 || points < 2) throw SettingError("tabulate needs dims >= 1 and points >= 2");
  std::vector<double> axis(points);
  for (std::size_t k = 0; k < points; ++k) {
    axis[k] = lo + (hi - lo) * (static_cast<double>(k) / static_cast<double>(points - 1));
  }
  std::vector<std::vector<double>> grid(dims, axis);
  std::size_t total = 1;
  for (std::size_t d = 0; d < dims; ++d) total *= points;
  std::vector<double> values(total);
  std::vector<double> x(dims);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (std::size_t d = dims; d-- > 0;) {
      x[d] = axis[rem % points];
      rem /= points;
    }
    values[flat] = f(x);
  }
  return GoalFunction(std::move(grid), std::move(values));
}

double GoalFunction::operator()(std::span<const double> x) const {
  const std::size_t dims = grid_.size();
  if (x.size() != dims) {
    throw SettingError("goal function expects " + std::to_string(dims) + " inputs, got " +
                       std::to_string(x.size()));
  }
  std::vector<std::size_t> base(dims);
  std::vector<double> frac(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    const auto& axis = grid_[d];
    if (axis.size() == 1) {
      base[d] = 0;
      frac[d] = 0.0;
      continue;
    }
    const double xd = std::clamp(x[d], axis.front(), axis.back());
    auto it = std::upper_bound(axis.begin(), axis.end(), xd);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - axis.begin() - 1));
    i = std::min(i, axis.size() - 2);
    base[d] = i;
    frac[d] = (xd - axis[i]) / (axis[i + 1] - axis[i]);
  }
  double acc = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << dims); ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t d = 0; d < dims; ++d) {
      const bool up = (corner >> d) & 1U;
      if (up && grid_[d].size() == 1) {
        w = 0.0;
        break;
      }
      w *= up ? frac[d] : 1.0 - frac[d];
      flat += (base[d] + (up ? 1 : 0)) * strides_[d];
    }
    if (w != 0.0) acc += w * values_[flat];
  }
  return acc;
}

// ---------------------------------------------------------------------------
// SettingSpec

void validate(const SettingSpec& s) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SingleItemRevenue>) {
          if (v.n_bidders < 1) throw SettingError("n_bidders must be at least 1");
          if (!(v.epsilon > 0.0) || v.epsilon > 1.0) throw SettingError("epsilon must be in (0, 1]");
          if (std::holds_alternative<dist::GridJointDistribution>(v.distribution) &&
              v.n_bidders != 2) {
            throw SettingError("the grid distribution requires exactly 2 bidders");
          }
        } else if constexpr (std::is_same_v<T, RediscoveryPerBidder>) {
          if (v.n_bidders < 1) throw SettingError("n_bidders must be at least 1");
          if (!(v.epsilon > 0.0) || v.epsilon > 1.0) throw SettingError("epsilon must be in (0, 1]");
        } else if constexpr (std::is_same_v<T, VcgRedistribution>) {
          if (v.n_bidders < 2) throw SettingError("redistribution needs at least 2 bidders");
          if (v.n_items < 1 || v.n_items >= v.n_bidders) {
            throw SettingError("n_items must satisfy 1 <= n_items < n_bidders");
          }
          if (v.fix_grid_resolution < 2) throw SettingError("fix_grid_resolution must be >= 2");
        } else {
          if (!v.inner) throw SettingError("distillation needs an inner setting");
          if (std::holds_alternative<Distillation>(*v.inner)) {
            throw SettingError("distillation settings cannot be nested");
          }
          validate(*v.inner);
          const auto sig = signature_for(*v.inner);
          if (sig.vector_output()) {
            throw SettingError("distillation supports scalar-output settings only");
          }
          if (v.goal.dimensions() != sig.arity) {
            throw SettingError("goal function has " + std::to_string(v.goal.dimensions()) +
                               " inputs but the heuristic takes " + std::to_string(sig.arity));
          }
        }
      },
      static_cast<const SettingSpec::variant&>(s));
}

dsl::HeuristicSignature signature_for(const SettingSpec& s) {
  return std::visit(
      [](const auto& v) -> dsl::HeuristicSignature {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SingleItemRevenue>) {
          return dsl::HeuristicSignature::joint(v.n_bidders);
        } else if constexpr (std::is_same_v<T, RediscoveryPerBidder>) {
          return dsl::HeuristicSignature::per_bidder();
        } else if constexpr (std::is_same_v<T, VcgRedistribution>) {
          return dsl::HeuristicSignature::redistribution(v.n_bidders);
        } else {
          return signature_for(*v.inner);
        }
      },
      static_cast<const SettingSpec::variant&>(s));
}

std::size_t n_bidders(const SettingSpec& s) {
  return std::visit(
      [](const auto& v) -> std::size_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Distillation>) {
          return n_bidders(*v.inner);
        } else {
          return v.n_bidders;
        }
      },
      static_cast<const SettingSpec::variant&>(s));
}

std::string setting_kind(const SettingSpec& s) {
  switch (s.index()) {
    case 0: return "single_item_revenue";
    case 1: return "rediscovery";
    case 2: return "vcg_redistribution";
    default: return "distillation";
  }
}

const dist::MarginalDistribution* bound_marginal(const SettingSpec& s) {
  if (const auto* r = std::get_if<RediscoveryPerBidder>(&s)) return &r->distribution;
  if (const auto* v = std::get_if<VcgRedistribution>(&s)) return &v->distribution;
  if (const auto* si = std::get_if<SingleItemRevenue>(&s)) {
    return std::get_if<dist::MarginalDistribution>(&si->distribution);
  }
  if (const auto* d = std::get_if<Distillation>(&s)) return bound_marginal(*d->inner);
  return nullptr;
}

SettingSpec setting_from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object() || !j.contains("kind")) throw SettingError("setting needs a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  SettingSpec out = SingleItemRevenue{};
  try {
    if (kind == "single_item_revenue") {
      reject_unknown(j, {"kind", "n_bidders", "distribution", "epsilon"}, "setting");
      SingleItemRevenue s;
      s.n_bidders = get_or<std::size_t>(j, "n_bidders", 2);
      if (j.contains("distribution")) {
        s.distribution = dist::model_from_json(distribution_json(j.at("distribution"), base_dir));
      }
      s.epsilon = get_or<double>(j, "epsilon", kDefaultEpsilon);
      out = s;
    } else if (kind == "rediscovery") {
      reject_unknown(j, {"kind", "n_bidders", "distribution", "epsilon"}, "setting");
      RediscoveryPerBidder s;
      s.n_bidders = get_or<std::size_t>(j, "n_bidders", 2);
      if (j.contains("distribution")) {
        s.distribution = dist::MarginalDistribution::from_json(j.at("distribution"));
      }
      s.epsilon = get_or<double>(j, "epsilon", kDefaultEpsilon);
      out = s;
    } else if (kind == "vcg_redistribution") {
      reject_unknown(j,
                     {"kind", "n_bidders", "n_items", "distribution", "fix_grid_resolution",
                      "reverse_fix"},
                     "setting");
      VcgRedistribution s;
      s.n_bidders = get_or<std::size_t>(j, "n_bidders", 4);
      s.n_items = get_or<std::size_t>(j, "n_items", 2);
      if (j.contains("distribution")) {
        s.distribution = dist::MarginalDistribution::from_json(j.at("distribution"));
      }
      s.fix_grid_resolution = get_or<std::size_t>(j, "fix_grid_resolution", kDefaultFixGrid);
      s.reverse_fix = reverse_fix_from_string(get_or<std::string>(j, "reverse_fix", "off"));
      out = s;
    } else if (kind == "distillation") {
      reject_unknown(j, {"kind", "inner", "goal_file", "goal", "metric"}, "setting");
      auto inner = std::make_shared<const SettingSpec>(setting_from_json(j.at("inner"), base_dir));
      std::string path;
      std::optional<GoalFunction> goal;
      if (j.contains("goal_file")) {
        path = resolve(j.at("goal_file").get<std::string>(), base_dir);
        goal = GoalFunction::load(path);
      } else if (j.contains("goal")) {
        goal = GoalFunction::from_json(j.at("goal"));
      } else {
        throw SettingError("distillation needs 'goal_file' or 'goal'");
      }
      Metric metric = goal->metric_hint().value_or(Metric::L2);
      if (j.contains("metric")) metric = metric_from_string(j.at("metric").get<std::string>());
      out = Distillation{std::move(inner), std::move(*goal), metric, path};
    } else {
      throw SettingError("unknown setting kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw SettingError(std::string("invalid setting: ") + e.what());
  } catch (const dist::DistributionError& e) {
    throw SettingError(std::string("invalid distribution: ") + e.what());
  }
  validate(out);
  return out;
}

json setting_to_json(const SettingSpec& s) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SingleItemRevenue>) {
          return {{"kind", "single_item_revenue"},
                  {"n_bidders", v.n_bidders},
                  {"distribution", dist::model_to_json(v.distribution)},
                  {"epsilon", v.epsilon}};
        } else if constexpr (std::is_same_v<T, RediscoveryPerBidder>) {
          return {{"kind", "rediscovery"},
                  {"n_bidders", v.n_bidders},
                  {"distribution", v.distribution.to_json()},
                  {"epsilon", v.epsilon}};
        } else if constexpr (std::is_same_v<T, VcgRedistribution>) {
          return {{"kind", "vcg_redistribution"},
                  {"n_bidders", v.n_bidders},
                  {"n_items", v.n_items},
                  {"distribution", v.distribution.to_json()},
                  {"fix_grid_resolution", v.fix_grid_resolution},
                  {"reverse_fix", to_string(v.reverse_fix)}};
        } else {
          json j = {{"kind", "distillation"},
                    {"inner", setting_to_json(*v.inner)},
                    {"metric", to_string(v.metric)}};
          if (!v.goal_path.empty()) {
            j["goal_file"] = v.goal_path;
          } else {
            j["goal"] = v.goal.to_json();
          }
          return j;
        }
      },
      static_cast<const SettingSpec::variant&>(s));
}

double MechanismOutcome::revenue() const {
  double total = 0.0;
  for (double p : payments) total += p;
  return total;
}

double MechanismOutcome::total_redistribution() const {
  double total = 0.0;
  for (double r : redistribution) total += r;
  return total;
}

}  // namespace amd::mech
