#include <fstream>
#include <regex>
#include <sstream>

#include "amd/proposers.hpp"

namespace amd::prop {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingTemplate("cannot read template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const mech::SettingSpec& prompt_setting(const mech::SettingSpec& s) {
  if (const auto* d = std::get_if<mech::Distillation>(&s)) return prompt_setting(*d->inner);
  return s;
}

std::string format_score(double s) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << s;
  return ss.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> load_strategies(const std::filesystem::path& dir,
                                         const std::string& preset) {
  if (preset == "none") return {};
  std::istringstream in(read_file(dir / "strategies" / (preset + ".txt")));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  if (out.size() != static_cast<std::size_t>(kStrategyCount)) {
    throw MissingTemplate("strategy preset '" + preset + "' must list " +
                          std::to_string(kStrategyCount) + " strategies, found " +
                          std::to_string(out.size()));
  }
  return out;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir, const std::string& preset) {
  PromptTemplates t;
  for (const char* kind : {"single_item_revenue", "rediscovery", "vcg_redistribution"}) {
    const auto path = dir / (std::string(kind) + ".txt");
    if (std::filesystem::exists(path)) t.system[kind] = read_file(path);
  }
  t.strategies = load_strategies(dir, preset);
  return t;
}

std::string substitute(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string needle = "{" + key + "}";
    for (auto pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + value.size())) {
      text.replace(pos, needle.size(), value);
    }
  }
  return text;
}

std::map<std::string, std::string> template_values(const mech::SettingSpec& setting,
                                                   std::size_t version) {
  const auto& s = prompt_setting(setting);
  const auto sig = mech::signature_for(s);
  std::string items = "1";
  std::string distribution;
  if (const auto* v = std::get_if<mech::VcgRedistribution>(&s)) {
    items = std::to_string(v->n_items);
    distribution = v->distribution.id();
  } else if (const auto* r = std::get_if<mech::RediscoveryPerBidder>(&s)) {
    distribution = r->distribution.id();
  } else if (const auto* si = std::get_if<mech::SingleItemRevenue>(&s)) {
    distribution = dist::model_id(si->distribution);
  }
  return {{"n_bidders", std::to_string(mech::n_bidders(s))},
          {"n_items", items},
          {"input_length", std::to_string(sig.arity)},
          {"output_length", std::to_string(sig.output_length())},
          {"distribution", distribution},
          {"version", std::to_string(version)}};
}

std::pair<std::string, std::string> render_prompts(const ProposalRequest& request,
                                                   const mech::SettingSpec& setting,
                                                   const PromptTemplates& templates) {
  const std::string kind = mech::setting_kind(prompt_setting(setting));
  const auto it = templates.system.find(kind);
  if (it == templates.system.end()) throw MissingTemplate("no system template for " + kind);
  const auto values = template_values(setting, request.version);
  std::string system = substitute(it->second, values);

  std::vector<Parent> parents = request.parents;
  std::stable_sort(parents.begin(), parents.end(),
                   [](const Parent& a, const Parent& b) { return a.score < b.score; });
  static const std::regex def_name(R"(^\s*def\s+[A-Za-z_][A-Za-z_0-9]*\s*\()");
  std::ostringstream user;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const std::string name = "heuristic_v" + std::to_string(i);
    user << "# " << name << " (score " << format_score(parents[i].score) << ")\n";
    user << std::regex_replace(trim(parents[i].source), def_name, "def " + name + "(",
                               std::regex_constants::format_first_only)
         << "\n\n";
  }
  if (request.strategy_id && !templates.strategies.empty()) {
    const auto k = static_cast<std::size_t>(*request.strategy_id - 1) % templates.strategies.size();
    user << templates.strategies[k] << "\n\n";
  }
  user << "Only output a standalone heuristic_v" << request.version << " function code.\n";
  return {system, user.str()};
}

std::string extract_code(const std::string& reply) {
  std::string body = reply;
  const auto open = reply.find("```");
  if (open != std::string::npos) {
    auto start = reply.find('\n', open);
    start = start == std::string::npos ? reply.size() : start + 1;
    const auto close = reply.find("```", start);
    body = reply.substr(start, close == std::string::npos ? std::string::npos : close - start);
  }
  std::istringstream in(body);
  std::ostringstream out;
  static const std::regex import_line(R"(^\s*(import\s+\S|from\s+\S+\s+import\s))");
  for (std::string line; std::getline(in, line);) {
    if (std::regex_search(line, import_line)) continue;
    out << line << '\n';
  }
  return trim(out.str()) + "\n";
}

}  // namespace amd::prop
