#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "amd/distributions.hpp"
#include "amd/evolution.hpp"

namespace amd::evo {

void EvolutionConfig::validate() const {
  if (num_islands < 2) throw std::invalid_argument("num_islands must be >= 2");
  if (functions_per_prompt < 1) throw std::invalid_argument("functions_per_prompt must be >= 1");
  if (!(reset_period > 0.0)) throw std::invalid_argument("reset_period must be > 0");
  if (!(reset_fraction >= 0.0 && reset_fraction < 1.0)) {
    throw std::invalid_argument("reset_fraction must be in [0, 1)");
  }
  if (temperature_init < 0.0 || temperature_floor < 0.0) {
    throw std::invalid_argument("temperatures must be >= 0");
  }
  if (!(decay_horizon > 0.0)) throw std::invalid_argument("decay_horizon must be > 0");
}

double temperature(std::size_t total_registered, const EvolutionConfig& config) {
  const double t = config.temperature_init *
                   (1.0 - static_cast<double>(total_registered) / config.decay_horizon);
  return std::max(config.temperature_floor, t);
}

std::int64_t cluster_key(double score) { return std::llround(score * 1000.0); }

nlohmann::json ScoredProgram::to_json() const {
  nlohmann::json j = {{"id", id},
                      {"source", source},
                      {"score", score},
                      {"island", island},
                      {"cluster", static_cast<double>(cluster) / 1000.0},
                      {"iteration", iteration},
                      {"parents", parents}};
  j["strategy"] = strategy ? nlohmann::json(*strategy) : nlohmann::json(nullptr);
  return j;
}

ScoredProgram ScoredProgram::from_json(const nlohmann::json& j) {
  ScoredProgram p;
  p.id = j.at("id").get<std::size_t>();
  p.source = j.at("source").get<std::string>();
  p.score = j.at("score").get<double>();
  p.island = j.at("island").get<std::size_t>();
  p.cluster = cluster_key(p.score);
  p.iteration = j.at("iteration").get<std::size_t>();
  p.parents = j.at("parents").get<std::vector<std::size_t>>();
  if (j.contains("strategy") && !j.at("strategy").is_null()) p.strategy = j.at("strategy").get<int>();
  return p;
}

ProgramDatabase::ProgramDatabase(EvolutionConfig config) : config_(std::move(config)) {
  config_.validate();
  islands_.resize(config_.num_islands);
}

void ProgramDatabase::insert_locked(ScoredProgram p) {
  auto& isl = islands_.at(p.island);
  isl.sources.insert(p.source);
  isl.clusters[p.cluster].push_back(programs_.size());
  programs_.push_back(std::move(p));
}

std::optional<ScoredProgram> ProgramDatabase::register_program(
    const dsl::HeuristicProgram& program, double score, std::size_t iteration,
    std::vector<std::size_t> parents, std::optional<int> strategy,
    std::optional<std::size_t> island) {
  if (!std::isfinite(score)) throw std::invalid_argument("cannot register a non-finite score");
  std::lock_guard lock(mutex_);
  std::size_t target = 0;
  if (island) {
    target = *island;
  } else if (!parents.empty()) {
    const auto it = std::find_if(programs_.begin(), programs_.end(),
                                 [&](const ScoredProgram& p) { return p.id == parents.front(); });
    target = it != programs_.end() ? it->island : total_registered_ % config_.num_islands;
  } else {
    target = total_registered_ % config_.num_islands;
  }
  if (target >= islands_.size()) throw std::out_of_range("island index out of range");

  ScoredProgram p;
  p.source = dsl::pretty_print(program);
  if (islands_[target].sources.count(p.source) != 0) {
    ++duplicates_;
    return std::nullopt;
  }
  p.id = next_id_++;
  p.score = score;
  p.island = target;
  p.cluster = cluster_key(score);
  p.iteration = iteration;
  p.parents = std::move(parents);
  p.strategy = strategy;
  p.size = dsl::structural_size(program);
  ++total_registered_;
  insert_locked(p);
  return p;
}

std::vector<ScoredProgram> ProgramDatabase::sample_parents(std::size_t island, std::size_t k,
                                                           std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  const auto& isl = islands_.at(island);
  if (isl.clusters.empty()) throw EmptyIsland("island " + std::to_string(island) + " is empty");

  std::vector<const std::vector<std::size_t>*> members;
  std::vector<double> best;
  for (const auto& [key, idx] : isl.clusters) {
    double b = -std::numeric_limits<double>::infinity();
    for (std::size_t i : idx) b = std::max(b, programs_[i].score);
    members.push_back(&idx);
    best.push_back(b);
  }
  const double top = *std::max_element(best.begin(), best.end());
  const double temp = temperature(total_registered_, config_);
  std::vector<double> w(best.size());
  for (std::size_t c = 0; c < best.size(); ++c) {
    w[c] = temp > 1e-12 ? std::exp((best[c] - top) / temp) : (best[c] == top ? 1.0 : 0.0);
  }
  auto draw = [&](const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = dist::unit_uniform(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    // rounding: last positive weight
    for (std::size_t i = weights.size(); i-- > 0;) {
      if (weights[i] > 0.0) return i;
    }
    return std::size_t{0};
  };
  const auto& cluster = *members[draw(w)];

  std::vector<double> pw(cluster.size());
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    pw[i] = 1.0 / static_cast<double>(std::max<std::size_t>(1, programs_[cluster[i]].size));
  }
  std::vector<ScoredProgram> out;
  for (std::size_t n = 0; n < std::min(k, cluster.size()); ++n) {
    const std::size_t i = draw(pw);
    out.push_back(programs_[cluster[i]]);
    pw[i] = 0.0;
  }
  return out;
}

std::optional<std::size_t> ProgramDatabase::best_index_locked(std::size_t island) const {
  std::optional<std::size_t> best;
  for (const auto& [key, idx] : islands_.at(island).clusters) {
    for (std::size_t i : idx) {
      if (!best || programs_[i].score > programs_[*best].score) best = i;
    }
  }
  return best;
}

ResetReport ProgramDatabase::reset_islands() {
  std::lock_guard lock(mutex_);
  const std::size_t n = islands_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto score_of = [&](std::size_t i) {
    const auto b = best_index_locked(i);
    return b ? programs_[*b].score : -std::numeric_limits<double>::infinity();
  };
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = score_of(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto n_clear = static_cast<std::size_t>(std::floor(static_cast<double>(n) * config_.reset_fraction));

  ResetReport report;
  report.survivors.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_clear));
  report.cleared.assign(order.end() - static_cast<std::ptrdiff_t>(n_clear), order.end());
  if (n_clear == 0) return report;

  std::vector<ScoredProgram> founders;
  for (std::size_t k = 0; k < report.cleared.size(); ++k) {
    const std::size_t donor = report.survivors[k % report.survivors.size()];
    const auto b = best_index_locked(donor);
    if (!b) continue;
    ScoredProgram copy = programs_[*b];
    copy.parents = {copy.id};
    copy.id = next_id_++;
    copy.island = report.cleared[k];
    founders.push_back(std::move(copy));
  }

  std::vector<bool> cleared(n, false);
  for (std::size_t i : report.cleared) cleared[i] = true;
  std::vector<ScoredProgram> kept;
  kept.reserve(programs_.size());
  for (auto& p : programs_) {
    if (!cleared[p.island]) kept.push_back(std::move(p));
  }
  programs_.clear();
  for (auto& isl : islands_) isl = Island{};
  for (auto& p : kept) insert_locked(std::move(p));
  for (auto& p : founders) insert_locked(std::move(p));
  return report;
}

std::optional<ScoredProgram> ProgramDatabase::best() const {
  std::lock_guard lock(mutex_);
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < programs_.size(); ++i) {
    if (!best || programs_[i].score > programs_[*best].score) best = i;
  }
  if (!best) return std::nullopt;
  return programs_[*best];
}

std::optional<ScoredProgram> ProgramDatabase::best_in_island(std::size_t island) const {
  std::lock_guard lock(mutex_);
  const auto b = best_index_locked(island);
  if (!b) return std::nullopt;
  return programs_[*b];
}

std::size_t ProgramDatabase::island_size(std::size_t island) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [key, idx] : islands_.at(island).clusters) n += idx.size();
  return n;
}

std::vector<ScoredProgram> ProgramDatabase::programs() const {
  std::lock_guard lock(mutex_);
  return programs_;
}

std::size_t ProgramDatabase::total_registered() const {
  std::lock_guard lock(mutex_);
  return total_registered_;
}

std::size_t ProgramDatabase::duplicates() const {
  std::lock_guard lock(mutex_);
  return duplicates_;
}

std::size_t ProgramDatabase::next_id() const {
  std::lock_guard lock(mutex_);
  return next_id_;
}

void ProgramDatabase::set_counters(std::size_t total_registered, std::size_t next_id,
                                   std::size_t duplicates) {
  std::lock_guard lock(mutex_);
  total_registered_ = total_registered;
  next_id_ = next_id;
  duplicates_ = duplicates;
}

void ProgramDatabase::save_jsonl(std::ostream& out) const {
  std::lock_guard lock(mutex_);
  for (const auto& p : programs_) out << p.to_json().dump() << '\n';
}

void ProgramDatabase::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save_jsonl(out);
}

void ProgramDatabase::load_jsonl(std::istream& in, const dsl::HeuristicSignature& signature) {
  std::vector<ScoredProgram> loaded;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto p = ScoredProgram::from_json(nlohmann::json::parse(line));
      p.size = dsl::structural_size(dsl::parse(p.source, signature));
      if (p.island >= config_.num_islands) throw std::out_of_range("island out of range");
      loaded.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("database line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::lock_guard lock(mutex_);
  programs_.clear();
  for (auto& isl : islands_) isl = Island{};
  std::size_t max_id = 0;
  for (auto& p : loaded) {
    max_id = std::max(max_id, p.id + 1);
    insert_locked(std::move(p));
  }
  total_registered_ = programs_.size();
  next_id_ = max_id;
}

void ProgramDatabase::load_jsonl(const std::filesystem::path& path,
                                 const dsl::HeuristicSignature& signature) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  load_jsonl(in, signature);
}

}  // namespace amd::evo
