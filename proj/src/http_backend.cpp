#include "coreflect/http_backend.hpp"

#include <algorithm>
#include <cstdlib>

#include <httplib.h>

namespace coreflect {

namespace {

json openai_messages(const ChatRequest& request, bool include_system) {
  json messages = json::array();
  if (include_system && !request.system_context.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_context}});
  }
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.speaker == Speaker::kUser ? "user" : "assistant"}, {"content", m.text}});
  }
  return messages;
}

class OpenAiTranslator : public ProviderTranslator {
 public:
  WireRequest chat(const ChatRequest& request, const std::string& model_id,
                   const std::string& api_key) const override {
    WireRequest w;
    w.path = "/chat/completions";
    w.body = {{"model", model_id},
              {"messages", openai_messages(request, true)},
              {"temperature", request.params.temperature},
              {"max_tokens", request.params.max_output_tokens}};
    if (!api_key.empty()) w.headers.emplace_back("Authorization", "Bearer " + api_key);
    return w;
  }

  std::string parse_chat(const json& body) const override {
    const auto& content = body.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw BackendError("reply content is not a string");
    return content.get<std::string>();
  }

  WireRequest embed(const std::vector<std::string>& texts, const std::string& model_id,
                    const std::string& api_key) const override {
    WireRequest w;
    w.path = "/embeddings";
    w.body = {{"model", model_id}, {"input", texts}};
    if (!api_key.empty()) w.headers.emplace_back("Authorization", "Bearer " + api_key);
    return w;
  }

  std::vector<EmbeddingVector> parse_embed(const json& body) const override {
    std::vector<std::pair<int, EmbeddingVector>> indexed;
    for (const auto& item : body.at("data")) {
      EmbeddingVector v;
      v.values = item.at("embedding").get<std::vector<double>>();
      indexed.emplace_back(item.value("index", static_cast<int>(indexed.size())), std::move(v));
    }
    std::sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<EmbeddingVector> out;
    for (auto& [_, v] : indexed) out.push_back(std::move(v));
    return out;
  }
};

class AnthropicTranslator : public ProviderTranslator {
 public:
  WireRequest chat(const ChatRequest& request, const std::string& model_id,
                   const std::string& api_key) const override {
    WireRequest w;
    w.path = "/messages";
    w.body = {{"model", model_id},
              {"messages", openai_messages(request, false)},
              {"temperature", request.params.temperature},
              {"max_tokens", request.params.max_output_tokens}};
    if (!request.system_context.empty()) w.body["system"] = request.system_context;
    if (!api_key.empty()) w.headers.emplace_back("x-api-key", api_key);
    w.headers.emplace_back("anthropic-version", "2023-06-01");
    return w;
  }

  std::string parse_chat(const json& body) const override {
    std::string text;
    for (const auto& block : body.at("content")) {
      if (block.value("type", "") == "text") text += block.at("text").get<std::string>();
    }
    return text;
  }

  WireRequest embed(const std::vector<std::string>&, const std::string&, const std::string&) const override {
    throw BackendError("anthropic provider does not serve embeddings");
  }

  std::vector<EmbeddingVector> parse_embed(const json&) const override {
    throw BackendError("anthropic provider does not serve embeddings");
  }
};

}  // namespace

std::unique_ptr<ProviderTranslator> make_translator(const std::string& provider) {
  if (provider == "openai") return std::make_unique<OpenAiTranslator>();
  if (provider == "anthropic") return std::make_unique<AnthropicTranslator>();
  throw ConfigError("unknown provider '" + provider + "'");
}

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), translator_(make_translator(config_.provider)) {
  // Split "scheme://host[:port]/base/path".
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  (void)api_key();  // fail fast when the credential variable is unset
}

std::string HttpBackend::api_key() const {
  if (config_.auth_env_var.empty()) return {};
  const char* value = std::getenv(config_.auth_env_var.c_str());
  if (value == nullptr || *value == '\0') {
    throw ConfigError("environment variable " + config_.auth_env_var + " is not set for " + config_.model_id);
  }
  return value;
}

json HttpBackend::post(const WireRequest& wire) {
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  for (const auto& [k, v] : wire.headers) headers.emplace(k, v);

  auto result = client.Post(base_path_ + wire.path, headers, wire.body.dump(), "application/json");
  if (!result) {
    throw TransientBackendError(config_.model_id + ": transport error: " + httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status == 429 || status >= 500) {
    throw TransientBackendError(config_.model_id + ": HTTP " + std::to_string(status));
  }
  if (status < 200 || status >= 300) {
    throw BackendError(config_.model_id + ": HTTP " + std::to_string(status) + ": " + result->body);
  }
  try {
    return json::parse(result->body);
  } catch (const json::parse_error& e) {
    throw BackendError(config_.model_id + ": response is not JSON: " + e.what());
  }
}

BackendReply HttpBackend::complete(const ChatRequest& request) {
  auto body = post(translator_->chat(request, config_.model_id, api_key()));
  try {
    return {translator_->parse_chat(body), std::nullopt};
  } catch (const json::exception& e) {
    throw BackendError(config_.model_id + ": unexpected response shape: " + e.what());
  }
}

std::vector<EmbeddingVector> HttpBackend::embed(const std::vector<std::string>& texts) {
  auto body = post(translator_->embed(texts, config_.model_id, api_key()));
  try {
    return translator_->parse_embed(body);
  } catch (const json::exception& e) {
    throw BackendError(config_.model_id + ": unexpected embedding response: " + e.what());
  }
}

}  // namespace coreflect
