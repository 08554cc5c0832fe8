#pragma once

#include <memory>
#include <string>

#include "coreflect/gateway.hpp"

namespace coreflect {

/// Wire-level request produced by a provider translator.
struct WireRequest {
  std::string path;  // appended to the endpoint's base path
  json body;
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Maps the uniform request shape onto one provider's JSON dialect.
class ProviderTranslator {
 public:
  virtual ~ProviderTranslator() = default;
  virtual WireRequest chat(const ChatRequest& request, const std::string& model_id,
                           const std::string& api_key) const = 0;
  virtual std::string parse_chat(const json& body) const = 0;
  virtual WireRequest embed(const std::vector<std::string>& texts, const std::string& model_id,
                            const std::string& api_key) const = 0;
  virtual std::vector<EmbeddingVector> parse_embed(const json& body) const = 0;
};

/// "openai": chat-completions / embeddings shape (also served by most
/// OpenAI-compatible gateways). "anthropic": messages API.
std::unique_ptr<ProviderTranslator> make_translator(const std::string& provider);

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  BackendReply complete(const ChatRequest& request) override;
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

 private:
  json post(const WireRequest& wire);
  std::string api_key() const;

  BackendConfig config_;
  std::unique_ptr<ProviderTranslator> translator_;
  std::string scheme_host_port_;
  std::string base_path_;
};

}  // namespace coreflect
