#pragma once

// Candidate generators: a symbolic mutator over the DSL grammar and an
// OpenAI-compatible chat-completions client.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amd/dsl.hpp"
#include "amd/mechanisms.hpp"
#include "json.hpp"

namespace amd::prop {

inline constexpr int kStrategyCount = 5;

struct Parent {
  std::string source;
  double score = 0.0;
};

struct ProposalRequest {
  std::vector<Parent> parents;
  std::optional<int> strategy_id;  // 1..5
  std::size_t version = 0;         // names heuristic_v{version}
};

/// A proposer never throws for a bad candidate; it reports a reason instead.
struct Proposal {
  std::string source;
  std::string rejection;  // empty when `source` is usable

  bool ok() const noexcept { return rejection.empty(); }
  static Proposal accept(std::string s) { return {std::move(s), {}}; }
  static Proposal reject(std::string why) { return {{}, std::move(why)}; }
};

/// The endpoint stayed unreachable through every retry.
class ProposerUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingTemplate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Proposer {
 public:
  virtual ~Proposer() = default;
  /// `seed` is the per-iteration seed; equal inputs give equal output for
  /// deterministic backends.
  virtual Proposal propose(const ProposalRequest& request, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

// ---- symbolic backend

/// Inlines let bindings into the body.
dsl::ExprPtr inline_lets(const dsl::ExprPtr& e);
/// Folds variable-free subtrees and drops x*1, x+0, x-0, x/1, 1*x, 0+x.
/// Keeps folds that would produce a non-finite value unfolded.
dsl::ExprPtr simplify(const dsl::ExprPtr& e);

struct SymbolicOptions {
  std::size_t max_depth = 4;      // fresh expressions
  std::size_t max_size = 40;      // larger offspring are shrunk
  double jitter = 0.1;            // log-uniform factor in [1/(1+j), 1+j]
  std::size_t max_attempts = 32;  // regenerate until the result parses
};

/// Strategy -> operator:
///   1 fresh random expression
///   2 subtree crossover of two parents
///   3 simplification, else shrink (hoist a child)
///   4 constant jitter or operator swap
///   5 subtree deletion (replace by a terminal)
/// Without a strategy the operator is drawn uniformly.
class SymbolicProposer final : public Proposer {
 public:
  SymbolicProposer(dsl::HeuristicSignature signature, bool distribution_builtins,
                   SymbolicOptions options = {});

  Proposal propose(const ProposalRequest& request, std::uint64_t seed) override;
  std::string name() const override { return "symbolic"; }

  const dsl::HeuristicSignature& signature() const noexcept { return signature_; }

 private:
  struct Impl;
  dsl::HeuristicSignature signature_;
  bool distribution_builtins_;
  SymbolicOptions options_;
  std::shared_ptr<const Impl> impl_;
};

// ---- prompts

/// System templates per setting kind plus the strategy sentences.
/// Placeholders: {n_bidders} {n_items} {input_length} {output_length}
/// {distribution} {version}.
struct PromptTemplates {
  std::map<std::string, std::string> system;  // keyed by setting kind
  std::vector<std::string> strategies;        // exactly 5 when enabled

  /// Reads `<dir>/<kind>.txt` for every kind present and
  /// `<dir>/strategies/<preset>.txt` (one strategy per non-empty line).
  static PromptTemplates load(const std::filesystem::path& dir, const std::string& preset);
};

/// Loads "none" as an empty strategy list.
std::vector<std::string> load_strategies(const std::filesystem::path& dir,
                                         const std::string& preset);

/// Replaces `{key}` occurrences; unknown placeholders are left alone.
std::string substitute(std::string text, const std::map<std::string, std::string>& values);

std::map<std::string, std::string> template_values(const mech::SettingSpec& setting,
                                                   std::size_t version);

/// (system, user). Parents are listed worst to best as heuristic_v0..;
/// the request asks for heuristic_v{version}.
std::pair<std::string, std::string> render_prompts(const ProposalRequest& request,
                                                   const mech::SettingSpec& setting,
                                                   const PromptTemplates& templates);

/// First fenced block, or the whole reply; import lines removed.
std::string extract_code(const std::string& reply);

// ---- LLM backend

struct LlmEndpointConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.8;
  int max_tokens = 512;
  double timeout_seconds = 60.0;
  int retries = 3;
  std::vector<double> backoff_seconds{1.0, 2.0, 4.0};

  void validate() const;
  nlohmann::json to_json() const;
  static LlmEndpointConfig from_json(const nlohmann::json& j);
};

/// POST {base_url}/chat/completions with bearer auth. Connection failures
/// and 429/5xx responses are retried; other failures become rejections.
class LlmProposer final : public Proposer {
 public:
  LlmProposer(LlmEndpointConfig endpoint, mech::SettingSpec setting, PromptTemplates templates);

  Proposal propose(const ProposalRequest& request, std::uint64_t seed) override;
  std::string name() const override { return "llm"; }

  /// Reads the API key; throws std::invalid_argument naming the variable.
  static std::string api_key(const LlmEndpointConfig& endpoint);

 private:
  LlmEndpointConfig endpoint_;
  mech::SettingSpec setting_;
  PromptTemplates templates_;
  std::string key_;
};

}  // namespace amd::prop
