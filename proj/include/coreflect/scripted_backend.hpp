#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"

namespace coreflect {

/// One pattern rule. A rule matches when the role agrees (if set) and the
/// flattened request contains every `contains` string and none of
/// `not_contains`. A matching rule either replies or raises an error.
struct ScriptRule {
  std::optional<RoleTag> role;
  std::vector<std::string> contains;
  std::vector<std::string> not_contains;
  std::string reply;
  enum class Failure { kNone, kTransient, kFatal } failure = Failure::kNone;
  /// When >= 0 the rule fires only for its first `times` matches; later
  /// requests fall through. Used to inject one-off faults.
  int times = -1;
};

/// Deterministic reply table: exact request digests first, then rules in
/// order.
struct Script {
  std::map<std::string, std::string> by_digest;
  std::vector<ScriptRule> rules;
};

Script parse_script(const json& raw);
Script load_script(const std::filesystem::path& path);

/// Fallback reply generator consulted when no script entry matches.
using Responder = std::function<std::optional<std::string>(const ChatRequest&, const BackendConfig&)>;

/// Built-in responder that speaks every stage protocol with deterministic,
/// seed-dependent content. Lets full pipeline runs execute offline.
Responder synthetic_responder();

/// Offline backend: a pure function of (request, seed). Unmatched requests
/// raise BackendError("unscripted request").
///
/// Embeddings derive from a seeded hash of the text. A text containing the
/// directive "[center:<k>]" is embedded as planted center k plus a noise
/// vector of norm `embedding_noise`; centers are mutually orthonormal.
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend(BackendConfig config, Script script, Responder fallback = {});

  BackendReply complete(const ChatRequest& request) override;
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

  /// Planted center `k` for this backend's seed (unit length).
  EmbeddingVector center(int k);
  EmbeddingVector embed_one(const std::string& text);

 private:
  BackendConfig config_;
  Script script_;
  Responder fallback_;
  std::mutex mu_;
  std::vector<int> rule_hits_;
  std::vector<std::vector<double>> centers_;
};

}  // namespace coreflect
