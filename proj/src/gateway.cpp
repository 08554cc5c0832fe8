#include "coreflect/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "coreflect/http_backend.hpp"
#include "coreflect/scripted_backend.hpp"

namespace coreflect {

std::string_view to_string(RoleTag r) {
  switch (r) {
    case RoleTag::kTestModel: return "test_model";
    case RoleTag::kUserSimulator: return "user_simulator";
    case RoleTag::kJudge: return "judge";
    case RoleTag::kVerifier: return "verifier";
    case RoleTag::kPlanner: return "planner";
    case RoleTag::kAnalyzer: return "analyzer";
  }
  return "";
}

std::optional<RoleTag> parse_role_tag(std::string_view s) {
  for (auto r : {RoleTag::kTestModel, RoleTag::kUserSimulator, RoleTag::kJudge, RoleTag::kVerifier,
                 RoleTag::kPlanner, RoleTag::kAnalyzer}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// ChatRequest
// ---------------------------------------------------------------------------

void ChatRequest::validate() const {
  if (messages.empty()) throw ConfigError("chat request has no messages");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto expected = (i % 2 == 0) ? Speaker::kUser : Speaker::kAssistant;
    if (messages[i].speaker != expected) throw ConfigError("chat request messages must alternate starting with user");
  }
  if (messages.back().speaker != Speaker::kUser) throw ConfigError("chat request must end with a user message");
  if (params.temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (params.max_output_tokens < 1) throw ConfigError("max_output_tokens must be positive");
}

json ChatRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages) {
    msgs.push_back({{"speaker", m.speaker == Speaker::kUser ? "user" : "assistant"}, {"text", m.text}});
  }
  return json{{"role_tag", coreflect::to_string(role_tag)},
              {"system_context", system_context},
              {"messages", msgs},
              {"temperature", params.temperature},
              {"max_output_tokens", params.max_output_tokens}};
}

std::string ChatRequest::digest() const { return sha256_hex(to_json().dump()); }

std::string ChatRequest::rendered() const {
  std::string out = system_context;
  for (const auto& m : messages) {
    out += "\n";
    out += m.text;
  }
  return out;
}

ChatRequest make_request(RoleTag role, std::string system_context, std::string user_text,
                         GenerationParams params, std::string call_key) {
  ChatRequest r;
  r.role_tag = role;
  r.system_context = std::move(system_context);
  r.messages.push_back({Speaker::kUser, std::move(user_text)});
  r.params = params;
  r.call_key = std::move(call_key);
  return r;
}

// ---------------------------------------------------------------------------
// BackendConfig
// ---------------------------------------------------------------------------

void BackendConfig::validate() const {
  if (model_id.empty()) throw ConfigError("backend model_id must be set");
  if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  if (retry.base_backoff_ms < 0) throw ConfigError("retry.base_backoff_ms must be >= 0");
  if (kind == BackendKind::kHttp) {
    if (endpoint.empty()) throw ConfigError("http backend " + model_id + " needs an endpoint");
    if (provider != "openai" && provider != "anthropic") {
      throw ConfigError("unknown provider '" + provider + "' for " + model_id);
    }
  }
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
}

BackendConfig parse_backend_config(const json& raw, std::string_view where) {
  if (!raw.is_object()) throw ConfigError(std::string(where) + ": backend must be an object");
  BackendConfig c;
  try {
    const auto kind = raw.value("kind", std::string("scripted"));
    if (kind == "http") {
      c.kind = BackendKind::kHttp;
    } else if (kind == "scripted") {
      c.kind = BackendKind::kScripted;
    } else {
      throw ConfigError(std::string(where) + ": unknown backend kind '" + kind + "'");
    }
    c.model_id = raw.value("model_id", std::string());
    c.endpoint = raw.value("endpoint", std::string());
    c.provider = raw.value("provider", std::string("openai"));
    c.auth_env_var = raw.value("auth_env_var", std::string());
    c.timeout_ms = raw.value("timeout_ms", 120000);
    c.seed = raw.value("seed", std::uint64_t{0});
    c.script_path = raw.value("script", std::string());
    c.synthetic = raw.value("synthetic", true);
    c.simulated_latency_ms = raw.value("simulated_latency_ms", 0);
    c.embedding_dim = raw.value("embedding_dim", 64);
    c.embedding_noise = raw.value("embedding_noise", 0.05);
    c.max_in_flight = raw.value("max_in_flight", 4);
    if (raw.contains("retry")) {
      c.retry.max_attempts = raw["retry"].value("max_attempts", 3);
      c.retry.base_backoff_ms = raw["retry"].value("base_backoff_ms", 500);
    }
    if (raw.contains("temperature") || raw.contains("max_output_tokens")) {
      GenerationParams p;
      p.temperature = raw.value("temperature", 0.0);
      p.max_output_tokens = raw.value("max_output_tokens", 2048);
      c.params = p;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + ": " + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(where) + ": " + e.what());
  }
  return c;
}

json to_json(const BackendConfig& c) {
  json j{{"kind", c.kind == BackendKind::kHttp ? "http" : "scripted"},
         {"model_id", c.model_id},
         {"max_in_flight", c.max_in_flight},
         {"retry", {{"max_attempts", c.retry.max_attempts}, {"base_backoff_ms", c.retry.base_backoff_ms}}}};
  if (c.kind == BackendKind::kHttp) {
    j["endpoint"] = c.endpoint;
    j["provider"] = c.provider;
    j["auth_env_var"] = c.auth_env_var;
    j["timeout_ms"] = c.timeout_ms;
  } else {
    j["seed"] = c.seed;
    j["synthetic"] = c.synthetic;
    j["simulated_latency_ms"] = c.simulated_latency_ms;
    j["embedding_dim"] = c.embedding_dim;
    j["embedding_noise"] = c.embedding_noise;
    if (!c.script_path.empty()) j["script"] = c.script_path;
  }
  if (c.params) {
    j["temperature"] = c.params->temperature;
    j["max_output_tokens"] = c.params->max_output_tokens;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Call log
// ---------------------------------------------------------------------------

json CallRecord::to_json() const {
  json j{{"call_key", call_key}, {"role_tag", role_tag}, {"model_id", model_id},
         {"digest", digest},     {"latency_ms", latency_ms}, {"outcome", outcome},
         {"attempts", attempts}, {"request", request},   {"reply", reply}};
  if (!error.empty()) j["error"] = error;
  return j;
}

CallRecord CallRecord::from_json(const json& j) {
  CallRecord r;
  r.call_key = j.value("call_key", "");
  r.role_tag = j.value("role_tag", "");
  r.model_id = j.value("model_id", "");
  r.digest = j.value("digest", "");
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.outcome = j.value("outcome", "");
  r.attempts = j.value("attempts", 0);
  r.request = j.value("request", json::object());
  r.reply = j.value("reply", "");
  r.error = j.value("error", "");
  return r;
}

void CallLog::append(CallRecord record) {
  std::lock_guard lock(mu_);
  ++total_;
  if (sink_.is_open()) {
    sink_ << record.to_json().dump() << '\n';
    sink_.flush();
  }
  if (retain_) records_.push_back(std::move(record));
}

void CallLog::open_sink(const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  if (sink_.is_open()) sink_.close();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  sink_.open(path, std::ios::app);
  if (!sink_) throw Error("IoError", "cannot open call log " + path.string(), ExitCode::kFailure);
  sink_path_ = path;
}

void CallLog::close_sink_canonical() {
  std::lock_guard lock(mu_);
  if (!sink_.is_open()) return;
  sink_.close();
  auto rows = read_jsonl(*sink_path_);
  std::stable_sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
    return a.value("call_key", "") < b.value("call_key", "");
  });
  write_jsonl(*sink_path_, rows);
  sink_path_.reset();
}

std::vector<CallRecord> CallLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t CallLog::size() const {
  std::lock_guard lock(mu_);
  return total_;
}

void CallLog::clear() {
  std::lock_guard lock(mu_);
  records_.clear();
  total_ = 0;
}

std::vector<CallRecord> read_call_log(const std::filesystem::path& path) {
  std::vector<CallRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(CallRecord::from_json(row));
  return out;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

std::shared_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.kind == BackendKind::kHttp) return std::make_shared<HttpBackend>(config);
  Script script;
  if (!config.script_path.empty()) script = load_script(config.script_path);
  Responder fallback;
  if (config.synthetic) fallback = synthetic_responder();
  return std::make_shared<ScriptedBackend>(config, std::move(script), std::move(fallback));
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

void InFlightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return available_ > 0; });
  --available_;
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    ++available_;
  }
  cv_.notify_one();
}

namespace {

struct LimiterGuard {
  explicit LimiterGuard(InFlightLimiter& l) : limiter(l) { limiter.acquire(); }
  ~LimiterGuard() { limiter.release(); }
  InFlightLimiter& limiter;
};

}  // namespace

ModelClient::ModelClient(BackendConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<CallLog> log,
                         Sleeper sleeper)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      log_(log ? std::move(log) : std::make_shared<CallLog>()),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
      })),
      limiter_(std::make_shared<InFlightLimiter>(config_.max_in_flight)) {}

template <typename Fn>
auto ModelClient::with_retry(Fn&& fn, int& attempts) -> decltype(fn()) {
  LimiterGuard guard(*limiter_);
  for (attempts = 1;; ++attempts) {
    try {
      return fn();
    } catch (const TransientBackendError& e) {
      if (attempts >= config_.retry.max_attempts) {
        throw BackendError(config_.model_id + ": giving up after " + std::to_string(attempts) +
                           " attempts: " + e.what());
      }
      const auto delay = static_cast<std::int64_t>(config_.retry.base_backoff_ms) << (attempts - 1);
      sleeper_(std::chrono::milliseconds(delay));
    }
  }
}

std::string ModelClient::chat(const ChatRequest& request) {
  request.validate();
  CallRecord record;
  record.call_key = request.call_key;
  record.role_tag = std::string(to_string(request.role_tag));
  record.model_id = config_.model_id;
  record.digest = request.digest();
  record.request = request.to_json();

  const auto start = std::chrono::steady_clock::now();
  int attempts = 0;
  try {
    auto reply = with_retry([&] { return backend_->complete(request); }, attempts);
    record.latency_ms = reply.latency_ms.value_or(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                      std::chrono::steady_clock::now() - start)
                                                      .count());
    record.outcome = "ok";
    record.attempts = attempts;
    record.reply = reply.text;
    log_->append(record);
    return reply.text;
  } catch (const std::exception& e) {
    record.latency_ms = config_.kind == BackendKind::kScripted
                            ? config_.simulated_latency_ms
                            : std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
    record.outcome = "error";
    record.attempts = attempts;
    record.error = e.what();
    log_->append(record);
    if (dynamic_cast<const Error*>(&e) != nullptr) throw;
    throw BackendError(config_.model_id + ": " + e.what());
  }
}

std::vector<EmbeddingVector> ModelClient::embed(const std::vector<std::string>& texts,
                                                const std::string& call_key) {
  if (texts.empty()) throw BackendError("empty batch");
  CallRecord record;
  record.call_key = call_key;
  record.role_tag = "embedder";
  record.model_id = config_.model_id;
  json input = texts;
  record.request = json{{"texts", input}};
  record.digest = sha256_hex(record.request.dump());

  const auto start = std::chrono::steady_clock::now();
  int attempts = 0;
  try {
    auto vectors = with_retry([&] { return backend_->embed(texts); }, attempts);
    if (vectors.size() != texts.size()) throw BackendError("embedding count mismatch");
    for (const auto& v : vectors) {
      if (v.dim() == 0 || v.dim() != vectors.front().dim()) throw BackendError("inconsistent embedding dimension");
      for (double x : v.values) {
        if (!std::isfinite(x)) throw BackendError("non-finite embedding entry");
      }
    }
    record.latency_ms = config_.kind == BackendKind::kScripted
                            ? config_.simulated_latency_ms
                            : std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
    record.outcome = "ok";
    record.attempts = attempts;
    record.reply = std::to_string(vectors.size()) + " vectors of dim " + std::to_string(vectors.front().dim());
    log_->append(record);
    return vectors;
  } catch (const std::exception& e) {
    record.latency_ms = config_.kind == BackendKind::kScripted ? config_.simulated_latency_ms : 0;
    record.outcome = "error";
    record.attempts = attempts;
    record.error = e.what();
    log_->append(record);
    if (dynamic_cast<const Error*>(&e) != nullptr) throw;
    throw BackendError(config_.model_id + ": " + e.what());
  }
}

std::shared_ptr<ModelClient> make_client(const BackendConfig& config, std::shared_ptr<CallLog> log,
                                         Sleeper sleeper) {
  return std::make_shared<ModelClient>(config, make_backend(config), std::move(log), std::move(sleeper));
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw DegenerateInput("dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0 || nb == 0) throw DegenerateInput("zero vector");
  return dot / std::sqrt(na * nb);
}

}  // namespace coreflect
