#include "httplib.h"

#include <cstdlib>
#include <thread>

#include "amd/proposers.hpp"

namespace amd::prop {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("base_url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  Url out;
  out.origin = url.substr(0, slash);
  out.path = slash == std::string::npos ? "" : url.substr(slash);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

bool transient_status(int status) { return status == 429 || status >= 500; }

}  // namespace

void LlmEndpointConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("llm.base_url is required");
  split_url(base_url);
  if (model.empty()) throw std::invalid_argument("llm.model is required");
  if (api_key_env.empty()) throw std::invalid_argument("llm.api_key_env must name a variable");
  if (retries < 0) throw std::invalid_argument("llm.retries must be >= 0");
  if (!(timeout_seconds > 0.0)) throw std::invalid_argument("llm.timeout_seconds must be > 0");
  if (max_tokens <= 0) throw std::invalid_argument("llm.max_tokens must be > 0");
  for (double b : backoff_seconds) {
    if (b < 0.0) throw std::invalid_argument("llm.backoff_seconds must be >= 0");
  }
}

nlohmann::json LlmEndpointConfig::to_json() const {
  return {{"base_url", base_url},       {"model", model},
          {"api_key_env", api_key_env}, {"temperature", temperature},
          {"max_tokens", max_tokens},   {"timeout_seconds", timeout_seconds},
          {"retries", retries},         {"backoff_seconds", backoff_seconds}};
}

LlmEndpointConfig LlmEndpointConfig::from_json(const nlohmann::json& j) {
  static const char* keys[] = {"base_url",   "model",           "api_key_env", "temperature",
                               "max_tokens", "timeout_seconds", "retries",     "backoff_seconds"};
  if (!j.is_object()) throw std::invalid_argument("llm must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(std::begin(keys), std::end(keys), k) == std::end(keys)) {
      throw std::invalid_argument("unknown key llm." + k);
    }
  }
  LlmEndpointConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.temperature = j.value("temperature", c.temperature);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.retries = j.value("retries", c.retries);
  c.backoff_seconds = j.value("backoff_seconds", c.backoff_seconds);
  return c;
}

std::string LlmProposer::api_key(const LlmEndpointConfig& endpoint) {
  const char* v = std::getenv(endpoint.api_key_env.c_str());
  if (v == nullptr || *v == '\0') {
    throw std::invalid_argument("environment variable " + endpoint.api_key_env +
                                " is not set (API key for the llm proposer)");
  }
  return v;
}

LlmProposer::LlmProposer(LlmEndpointConfig endpoint, mech::SettingSpec setting,
                         PromptTemplates templates)
    : endpoint_(std::move(endpoint)), setting_(std::move(setting)), templates_(std::move(templates)) {
  endpoint_.validate();
  key_ = api_key(endpoint_);
  // fail early on a missing template
  render_prompts({{}, std::nullopt, 0}, setting_, templates_);
}

Proposal LlmProposer::propose(const ProposalRequest& request, std::uint64_t) {
  const auto [system, user] = render_prompts(request, setting_, templates_);
  const Url url = split_url(endpoint_.base_url);
  const nlohmann::json body = {
      {"model", endpoint_.model},
      {"messages",
       {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}},
      {"temperature", endpoint_.temperature},
      {"max_tokens", endpoint_.max_tokens}};
  const std::string payload = body.dump();

  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(endpoint_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_bearer_token_auth(key_);

  std::string last;
  bool unreachable = false;
  for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
    if (attempt > 0 && !endpoint_.backoff_seconds.empty()) {
      const auto i = std::min<std::size_t>(static_cast<std::size_t>(attempt - 1),
                                           endpoint_.backoff_seconds.size() - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(endpoint_.backoff_seconds[i]));
    }
    auto res = client.Post(url.path + "/chat/completions", payload, "application/json");
    if (!res) {
      const auto err = res.error();
      unreachable = err != httplib::Error::Read && err != httplib::Error::Write;
      last = unreachable ? "unreachable: " + httplib::to_string(err) : "timeout";
      continue;
    }
    unreachable = false;
    if (transient_status(res->status)) {
      last = "http_error: status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      return Proposal::reject("http_error: status " + std::to_string(res->status));
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
      const auto& choice = reply.at("choices").at(0);
      if (choice.value("finish_reason", "") == "length") {
        return Proposal::reject("truncated: completion hit max_tokens");
      }
      const auto& content = choice.at("message").at("content");
      if (!content.is_string() || content.get<std::string>().find_first_not_of(" \t\r\n") ==
                                      std::string::npos) {
        return Proposal::reject("empty_completion");
      }
      return Proposal::accept(extract_code(content.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      return Proposal::reject(std::string("http_error: malformed reply: ") + e.what());
    }
  }
  if (unreachable) {
    throw ProposerUnavailable(endpoint_.base_url + " after " +
                              std::to_string(endpoint_.retries + 1) + " attempts: " + last);
  }
  return Proposal::reject(last);
}

}  // namespace amd::prop
