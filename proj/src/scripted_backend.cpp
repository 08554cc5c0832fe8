#include "coreflect/scripted_backend.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <map>
#include <regex>

#include "coreflect/protocol.hpp"

namespace coreflect {

// ---------------------------------------------------------------------------
// Script files
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> string_or_list(const json& v, const char* field) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw ConfigError(std::string("script rule '") + field + "' must be a string or list");
  std::vector<std::string> out;
  for (const auto& s : v) out.push_back(s.get<std::string>());
  return out;
}

}  // namespace

Script parse_script(const json& raw) {
  Script script;
  try {
    for (const auto& r : raw.value("replies", json::array())) {
      script.by_digest[r.at("digest").get<std::string>()] = r.at("reply").get<std::string>();
    }
    for (const auto& r : raw.value("rules", json::array())) {
      ScriptRule rule;
      if (r.contains("role")) {
        rule.role = parse_role_tag(r["role"].get<std::string>());
        if (!rule.role) throw ConfigError("script rule has unknown role " + r["role"].dump());
      }
      if (r.contains("contains")) rule.contains = string_or_list(r["contains"], "contains");
      if (r.contains("not_contains")) rule.not_contains = string_or_list(r["not_contains"], "not_contains");
      rule.reply = r.value("reply", std::string());
      const auto error = r.value("error", std::string());
      if (error == "transient") {
        rule.failure = ScriptRule::Failure::kTransient;
      } else if (error == "fatal") {
        rule.failure = ScriptRule::Failure::kFatal;
      } else if (!error.empty()) {
        throw ConfigError("script rule error must be 'transient' or 'fatal'");
      }
      rule.times = r.value("times", -1);
      script.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid script: ") + e.what());
  }
  return script;
}

Script load_script(const std::filesystem::path& path) {
  try {
    return parse_script(read_json(path));
  } catch (const SchemaError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic responder
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kIntents = {
    "Initiate Core Task",          "Request Specific Detail",      "Challenge for Deeper Detail",
    "Request Summary & Recall Preference", "Validate Accuracy with Edge Case", "Ask for an Alternative Approach",
    "Request a Worked Example",    "Clarify an Earlier Point"};

std::string line_after(std::string_view text, std::string_view label) {
  for (const auto& line : split_lines(text)) {
    const auto t = trim(line);
    if (t.rfind(label, 0) == 0) return trim(std::string_view(t).substr(label.size()));
  }
  return {};
}

std::uint64_t mix(const BackendConfig& config, std::string_view salt, std::string_view text) {
  return hash64(std::to_string(config.seed) + "|" + std::string(salt) + "|" + std::string(text));
}

std::string reply_planner(const ChatRequest& req, const BackendConfig& config) {
  const auto& prompt = req.messages.front().text;
  const auto instance = line_after(prompt, "Instance:");
  const auto bounds = line_after(prompt, protocol::kAllowedTurnsLabel);
  std::smatch m;
  const std::regex re(R"(min=(\d+) max=(\d+|none))");
  if (!std::regex_search(bounds, m, re)) return {};
  const int lo = std::stoi(m[1]);
  const bool bounded = m[2] != "none";
  const int hi = bounded ? std::stoi(m[2]) : INT_MAX;
  const auto h = mix(config, "plan", instance + "#" + line_after(prompt, "Iteration:"));
  int n = 0;
  if (bounded) {
    n = hi <= 3 ? hi : std::max(lo, hi - static_cast<int>(h % 2));
  } else {
    n = lo + static_cast<int>(h % 2);
  }

  std::vector<std::string> ids;
  std::smatch im;
  const std::regex id_re(R"(^- \[([^\]]+)\])");
  for (const auto& line : split_lines(prompt)) {
    if (std::regex_search(line, im, id_re)) ids.push_back(im[1]);
  }

  std::string out = "```template\nturn_count: " + std::to_string(n) + "\n";
  for (int k = 1; k <= n; ++k) {
    std::string type = "Intermediate Turn";
    if (k == 1) {
      type = "Early Turn";
    } else if (k == n) {
      type = "Challenging Turn";
    } else if (k == n - 1) {
      type = "Preference Recall Turn";
    }
    const auto& intent = kIntents[static_cast<std::size_t>(k - 1) % kIntents.size()];
    out += "turn: " + std::to_string(k) + "\ntype: " + type + "\nintent: " + intent +
           "\neval: Checks whether the assistant handles '" + intent + "' while keeping earlier context.\n";
  }
  out += "insights_used: " + (ids.empty() ? std::string("none") : join(ids, ", ")) + "\n```";
  return out;
}

std::string reply_simulator(const ChatRequest& req) {
  const auto& prompt = req.messages.front().text;
  const auto intent = line_after(prompt, "Turn intent:");
  const auto turn = line_after(prompt, "Turn ");
  return "(" + turn + ") " + intent + ": could you help me with this part?";
}

std::string reply_test_model(const ChatRequest& req, const BackendConfig& config) {
  const auto base = 2 + static_cast<int>(hash64("quality|" + std::to_string(config.seed)) % 4);
  const auto& last = req.messages.back().text;
  const auto h = mix(config, "turn", last + "#" + std::to_string(req.messages.size()));
  const int jitter = static_cast<int>(h % 4) - 1;  // -1, 0, 0, +1 after clamping below
  const int q = std::clamp(base + (jitter == 2 ? 0 : jitter), 1, 5);
  return "Here is my response to your request (quality:" + std::to_string(q) + ").";
}

std::vector<int> qualities(std::string_view text) {
  std::vector<int> out;
  const std::string s(text);
  const std::regex re(R"(quality:([1-5]))");
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stoi((*it)[1]));
  }
  return out;
}

std::string reply_judge(const ChatRequest& req, const BackendConfig& config) {
  const auto& prompt = req.messages.front().text;
  const auto q = qualities(req.system_context);
  double mean_q = 3.0;
  if (!q.empty()) {
    mean_q = 0.0;
    for (int v : q) mean_q += v;
    mean_q /= static_cast<double>(q.size());
  }
  if (prompt.rfind(protocol::kJudgeObserveHeader, 0) == 0) {
    const int n = std::stoi(line_after(prompt, protocol::kModelTurnsLabel));
    std::string out;
    for (int k = 1; k <= n; ++k) {
      const int qk = k <= static_cast<int>(q.size()) ? q[k - 1] : 3;
      out += "TURN " + std::to_string(k) + ": The reply addressed the request at level " + std::to_string(qk) + ".\n";
    }
    return out;
  }
  if (prompt.rfind(protocol::kJudgeSynthesizeHeader, 0) == 0) {
    return "STRENGTH: The assistant kept the dialogue moving.\n"
           "WEAKNESS: Quality varied between turns.";
  }
  if (prompt.rfind(protocol::kJudgeRateHeader, 0) == 0) {
    std::string out;
    for (const auto& name : split(line_after(prompt, protocol::kRubricsToRateLabel), ',')) {
      const auto rubric = trim(name);
      const auto h = mix(config, "rate", req.system_context + "#" + prompt + "#" + rubric);
      const int jitter = static_cast<int>(h % 4) - 1;
      const int score = std::clamp(static_cast<int>(std::lround(mean_q)) + (jitter == 2 ? 0 : jitter), 1, 5);
      std::string rationale;
      if (score >= 4) {
        rationale = "[center:0] The assistant stayed on task and matched the user's preferred style";
      } else if (score == 3) {
        rationale = "[center:1] The assistant made partial progress but drifted from the user's preferences";
      } else {
        rationale = "[center:2] The assistant lost track of the task and ignored stated preferences";
      }
      out += rubric + " | " + std::to_string(score) + " | " + rationale + " (" + rubric + ").\n";
    }
    return out;
  }
  return {};
}

std::string reply_analyzer(const ChatRequest& req) {
  const auto& prompt = req.messages.front().text;
  if (prompt.rfind(protocol::kInsightHeader, 0) == 0) {
    const auto label = line_after(prompt, "Label:");
    const auto polarity = line_after(prompt, "Polarity:");
    const auto verb = polarity == "desirable" ? "Reward" : "Penalize";
    return "```insight\ndescription: Recurring pattern: " + label + "\ncriteria: " + verb +
           " conversations that show this pattern.\n```";
  }
  if (prompt.rfind(protocol::kUpdateHeader, 0) == 0) {
    const auto rubrics_block = extract_fenced_block(prompt, protocol::kRubricsJsonFence);
    const auto insights_block = extract_fenced_block(prompt, protocol::kInsightsJsonFence);
    if (!rubrics_block.found || !insights_block.found) return {};
    const auto rubrics = json::parse(rubrics_block.body);
    const auto insights = json::parse(insights_block.body);
    std::map<std::string, std::vector<json>> by_rubric;
    for (const auto& ins : insights) {
      std::string target = rubrics.at("rubrics").at(0).at("name");
      if (!ins.at("rubrics").empty()) target = ins.at("rubrics").at(0);
      by_rubric[target].push_back(ins);
    }
    json revisions = json::array();
    for (const auto& r : rubrics.at("rubrics")) {
      const auto it = by_rubric.find(r.at("name"));
      if (it == by_rubric.end()) continue;
      std::string description = r.at("description");
      auto cues = r.value("evidence_cues", json::array());
      json ids = json::array();
      for (const auto& ins : it->second) {
        description += " Also weigh: " + ins.at("criteria").get<std::string>();
        cues.push_back(ins.at("criteria"));
        ids.push_back(ins.at("id"));
      }
      revisions.push_back(
          {{"name", r.at("name")}, {"description", description}, {"evidence_cues", cues}, {"insight_ids", ids}});
    }
    return "```json\n" + json{{"revisions", revisions}}.dump(2) + "\n```";
  }
  return {};
}

}  // namespace

Responder synthetic_responder() {
  return [](const ChatRequest& req, const BackendConfig& config) -> std::optional<std::string> {
    std::string reply;
    switch (req.role_tag) {
      case RoleTag::kVerifier: reply = "Yes"; break;
      case RoleTag::kPlanner: reply = reply_planner(req, config); break;
      case RoleTag::kUserSimulator: reply = reply_simulator(req); break;
      case RoleTag::kTestModel: reply = reply_test_model(req, config); break;
      case RoleTag::kJudge: reply = reply_judge(req, config); break;
      case RoleTag::kAnalyzer: reply = reply_analyzer(req); break;
    }
    if (reply.empty()) return std::nullopt;
    return reply;
  };
}

// ---------------------------------------------------------------------------
// ScriptedBackend
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(BackendConfig config, Script script, Responder fallback)
    : config_(std::move(config)),
      script_(std::move(script)),
      fallback_(std::move(fallback)),
      rule_hits_(script_.rules.size(), 0) {}

BackendReply ScriptedBackend::complete(const ChatRequest& request) {
  const auto latency = std::int64_t{config_.simulated_latency_ms};
  if (const auto it = script_.by_digest.find(request.digest()); it != script_.by_digest.end()) {
    return {it->second, latency};
  }
  const auto flat = request.rendered();
  for (std::size_t i = 0; i < script_.rules.size(); ++i) {
    const auto& rule = script_.rules[i];
    if (rule.role && *rule.role != request.role_tag) continue;
    const bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                                 [&](const std::string& s) { return contains(flat, s); });
    const bool none = std::none_of(rule.not_contains.begin(), rule.not_contains.end(),
                                   [&](const std::string& s) { return contains(flat, s); });
    if (!all || !none) continue;
    if (rule.times >= 0) {
      std::lock_guard lock(mu_);
      if (rule_hits_[i] >= rule.times) continue;
      ++rule_hits_[i];
    }
    switch (rule.failure) {
      case ScriptRule::Failure::kTransient: throw TransientBackendError("scripted transient failure");
      case ScriptRule::Failure::kFatal: throw BackendError("scripted fatal failure");
      case ScriptRule::Failure::kNone: return {rule.reply, latency};
    }
  }
  if (fallback_) {
    if (auto reply = fallback_(request, config_)) return {std::move(*reply), latency};
  }
  throw BackendError("unscripted request");
}

EmbeddingVector ScriptedBackend::center(int k) {
  if (k < 0 || k >= config_.embedding_dim) {
    throw BackendError("planted center " + std::to_string(k) + " exceeds the embedding dimension");
  }
  std::lock_guard lock(mu_);
  const auto dim = static_cast<std::size_t>(config_.embedding_dim);
  while (static_cast<int>(centers_.size()) <= k) {
    Rng rng(derive_seed(config_.seed, "center/" + std::to_string(centers_.size())));
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    // Gram-Schmidt against the earlier centers keeps them orthonormal.
    for (const auto& c : centers_) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += v[d] * c[d];
      for (std::size_t d = 0; d < dim; ++d) v[d] -= dot * c[d];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    centers_.push_back(std::move(v));
  }
  return {centers_[static_cast<std::size_t>(k)]};
}

EmbeddingVector ScriptedBackend::embed_one(const std::string& text) {
  const auto dim = static_cast<std::size_t>(config_.embedding_dim);
  Rng rng(derive_seed(config_.seed, "embed/" + text));
  std::vector<double> noise(dim);
  double norm = 0.0;
  for (auto& x : noise) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : noise) x /= norm;

  static const std::regex directive(R"(\[center:(\d+)\])");
  std::smatch m;
  if (!std::regex_search(text, m, directive)) return {noise};
  auto v = center(std::stoi(m[1])).values;
  for (std::size_t d = 0; d < dim; ++d) v[d] += config_.embedding_noise * noise[d];
  return {v};
}

std::vector<EmbeddingVector> ScriptedBackend::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

}  // namespace coreflect
