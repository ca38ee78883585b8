#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "amd/config.hpp"

#ifndef AMD_DATA_DIR
#define AMD_DATA_DIR "."
#endif

namespace amd::cfg {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (allowed.count(k) == 0) {
      throw ConfigError("unknown key " + (where.empty() ? k : where + "." + k));
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + key + ": " + e.what());
  }
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return p;
  return (base / path).lexically_normal().string();
}

}  // namespace

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("AMD_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return AMD_DATA_DIR;
}

const std::vector<KeyDoc>& key_docs() {
  static const std::vector<KeyDoc> docs = {
      {"setting", "(required)", "setting object; see docs/grammar.md for kinds"},
      {"settings", "-", "list of settings scored by their unweighted mean (instead of setting)"},
      {"seed", "(drawn and printed)", "top-level seed for the evolution loop"},
      {"output_dir", "runs/latest", "directory for database.jsonl, trace.csv, best.txt, summary.json"},
      {"resume", "null", "directory of an earlier run to continue"},
      {"workers", "1", "concurrent proposer/evaluator workers; 1 is reproducible"},
      {"seed_program", "return 0 (or never sell)", "starting heuristic source"},
      {"checkpoint_every", "10", "iterations between database flushes"},
      {"evaluation.n_samples", "0 (3000 redistribution, 10000 otherwise)", "Monte Carlo samples"},
      {"evaluation.seed", "0", "seed of the fixed evaluation batch"},
      {"evolution.num_islands", "10", "number of islands (>= 2)"},
      {"evolution.reset_clock", "wall", "wall (seconds) or iterations"},
      {"evolution.reset_period", "3600", "time between island resets in reset_clock units"},
      {"evolution.reset_fraction", "0.5", "fraction of islands cleared per reset"},
      {"evolution.temperature_init", "0.1", "cluster sampling temperature at start"},
      {"evolution.temperature_floor", "0", "lower bound of the temperature"},
      {"evolution.decay_horizon", "30000", "programs after which the temperature reaches the floor"},
      {"evolution.functions_per_prompt", "2", "parents per proposal"},
      {"evolution.use_strategies", "true", "cycle the five strategies"},
      {"evolution.max_iterations", "1000", "iteration budget"},
      {"evolution.target_score", "null", "stop once the best score reaches this"},
      {"proposer.kind", "symbolic", "symbolic or llm"},
      {"proposer.prompts_dir", "<data>/prompts", "system templates and strategies/"},
      {"proposer.strategies", "default", "strategy preset: default, rediscovery or none"},
      {"proposer.llm.base_url", "(required for llm)", "OpenAI-compatible endpoint root"},
      {"proposer.llm.model", "(required for llm)", "model name"},
      {"proposer.llm.api_key_env", "OPENAI_API_KEY", "environment variable holding the key"},
      {"proposer.llm.temperature", "0.8", "sampling temperature"},
      {"proposer.llm.max_tokens", "512", "completion token limit"},
      {"proposer.llm.timeout_seconds", "60", "per-request timeout"},
      {"proposer.llm.retries", "3", "retries after the first attempt"},
      {"proposer.llm.backoff_seconds", "[1, 2, 4]", "sleep before each retry"},
  };
  return docs;
}

std::string key_help() {
  std::ostringstream out;
  out << "Config keys (JSON):\n";
  std::size_t width = 0;
  for (const auto& d : key_docs()) width = std::max(width, d.key.size());
  for (const auto& d : key_docs()) {
    out << "  " << d.key << std::string(width - d.key.size() + 2, ' ') << "default: "
        << d.default_value << "\n  " << std::string(width + 2, ' ') << d.description << "\n";
  }
  return out.str();
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j,
                 {"setting", "settings", "seed", "output_dir", "resume", "workers", "seed_program",
                  "checkpoint_every", "evaluation", "evolution", "proposer"},
                 "");
  RunConfig c;
  try {
    if (j.contains("setting") && j.contains("settings")) {
      throw ConfigError("use either 'setting' or 'settings', not both");
    }
    if (j.contains("setting")) {
      c.settings.push_back(mech::setting_from_json(j.at("setting"), base_dir.string()));
    } else if (j.contains("settings")) {
      for (const auto& s : j.at("settings")) {
        c.settings.push_back(mech::setting_from_json(s, base_dir.string()));
      }
    }
  } catch (const mech::SettingError& e) {
    throw ConfigError(std::string("setting: ") + e.what());
  }
  if (j.contains("seed") && !j.at("seed").is_null()) {
    std::uint64_t s = 0;
    read(j, "seed", s, "");
    c.seed = s;
  }
  read(j, "output_dir", c.output_dir, "");
  c.output_dir = resolve(c.output_dir, base_dir);
  if (j.contains("resume") && !j.at("resume").is_null()) {
    std::string r;
    read(j, "resume", r, "");
    c.resume = resolve(r, base_dir);
  }
  read(j, "workers", c.workers, "");
  if (j.contains("seed_program") && !j.at("seed_program").is_null()) {
    std::string s;
    read(j, "seed_program", s, "");
    c.seed_program = s;
  }
  read(j, "checkpoint_every", c.checkpoint_every, "");

  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    reject_unknown(e, {"n_samples", "seed"}, "evaluation");
    read(e, "n_samples", c.n_samples, "evaluation.");
    read(e, "seed", c.eval_seed, "evaluation.");
  }
  if (j.contains("evolution")) {
    const auto& e = j.at("evolution");
    reject_unknown(e,
                   {"num_islands", "reset_clock", "reset_period", "reset_fraction",
                    "temperature_init", "temperature_floor", "decay_horizon",
                    "functions_per_prompt", "use_strategies", "max_iterations", "target_score"},
                   "evolution");
    auto& ev = c.evolution;
    read(e, "num_islands", ev.num_islands, "evolution.");
    if (e.contains("reset_clock")) {
      const auto clock = e.at("reset_clock").get<std::string>();
      if (clock == "wall") {
        ev.reset_clock = evo::ResetClock::WallTime;
      } else if (clock == "iterations") {
        ev.reset_clock = evo::ResetClock::Iterations;
      } else {
        throw ConfigError("evolution.reset_clock must be 'wall' or 'iterations'");
      }
    }
    read(e, "reset_period", ev.reset_period, "evolution.");
    read(e, "reset_fraction", ev.reset_fraction, "evolution.");
    read(e, "temperature_init", ev.temperature_init, "evolution.");
    read(e, "temperature_floor", ev.temperature_floor, "evolution.");
    read(e, "decay_horizon", ev.decay_horizon, "evolution.");
    read(e, "functions_per_prompt", ev.functions_per_prompt, "evolution.");
    read(e, "use_strategies", ev.use_strategies, "evolution.");
    read(e, "max_iterations", ev.max_iterations, "evolution.");
    if (e.contains("target_score") && !e.at("target_score").is_null()) {
      double t = 0.0;
      read(e, "target_score", t, "evolution.");
      ev.target_score = t;
    }
  }
  if (j.contains("proposer")) {
    const auto& p = j.at("proposer");
    reject_unknown(p, {"kind", "prompts_dir", "strategies", "llm"}, "proposer");
    read(p, "kind", c.proposer, "proposer.");
    read(p, "prompts_dir", c.prompts_dir, "proposer.");
    c.prompts_dir = resolve(c.prompts_dir, base_dir);
    read(p, "strategies", c.strategies, "proposer.");
    if (p.contains("llm")) {
      try {
        c.llm = prop::LlmEndpointConfig::from_json(p.at("llm"));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("proposer.") + e.what());
      }
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  if (settings.empty()) throw ConfigError("a 'setting' is required");
  try {
    for (const auto& s : settings) mech::validate(s);
    evolution.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto sig = mech::signature_for(settings.front());
  for (const auto& s : settings) {
    if (!(mech::signature_for(s) == sig)) {
      throw ConfigError("all settings must share one heuristic signature");
    }
  }
  if (proposer != "symbolic" && proposer != "llm") {
    throw ConfigError("proposer.kind must be 'symbolic' or 'llm'");
  }
  if (strategies != "default" && strategies != "rediscovery" && strategies != "none") {
    throw ConfigError("proposer.strategies must be default, rediscovery or none");
  }
  if (proposer == "llm") {
    try {
      llm.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("proposer.") + e.what());
    }
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  if (settings.size() == 1) {
    j["setting"] = mech::setting_to_json(settings.front());
  } else {
    j["settings"] = nlohmann::json::array();
    for (const auto& s : settings) j["settings"].push_back(mech::setting_to_json(s));
  }
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  j["output_dir"] = output_dir;
  j["resume"] = resume ? nlohmann::json(*resume) : nlohmann::json(nullptr);
  j["workers"] = workers;
  j["seed_program"] = seed_program ? nlohmann::json(*seed_program) : nlohmann::json(nullptr);
  j["checkpoint_every"] = checkpoint_every;
  j["evaluation"] = {{"n_samples", n_samples}, {"seed", eval_seed}};
  const auto& e = evolution;
  j["evolution"] = {{"num_islands", e.num_islands},
                    {"reset_clock", e.reset_clock == evo::ResetClock::WallTime ? "wall" : "iterations"},
                    {"reset_period", e.reset_period},
                    {"reset_fraction", e.reset_fraction},
                    {"temperature_init", e.temperature_init},
                    {"temperature_floor", e.temperature_floor},
                    {"decay_horizon", e.decay_horizon},
                    {"functions_per_prompt", e.functions_per_prompt},
                    {"use_strategies", e.use_strategies},
                    {"max_iterations", e.max_iterations},
                    {"target_score", e.target_score ? nlohmann::json(*e.target_score) : nlohmann::json(nullptr)}};
  j["proposer"] = {{"kind", proposer}, {"prompts_dir", prompts_dir}, {"strategies", strategies}};
  if (proposer == "llm") j["proposer"]["llm"] = llm.to_json();
  return j;
}

dsl::HeuristicSignature RunConfig::signature() const { return mech::signature_for(settings.front()); }

std::filesystem::path RunConfig::resolved_prompts_dir() const {
  return prompts_dir.empty() ? data_dir() / "prompts" : std::filesystem::path(prompts_dir);
}

}  // namespace amd::cfg
