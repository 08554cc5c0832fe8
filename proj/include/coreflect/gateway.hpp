#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/error.hpp"
#include "coreflect/util.hpp"

namespace coreflect {

// ===========================================================================
// Requests
// ===========================================================================

enum class RoleTag { kTestModel, kUserSimulator, kJudge, kVerifier, kPlanner, kAnalyzer };
std::string_view to_string(RoleTag r);
std::optional<RoleTag> parse_role_tag(std::string_view s);

enum class Speaker { kUser, kAssistant };

struct Message {
  Speaker speaker = Speaker::kUser;
  std::string text;
};

struct GenerationParams {
  double temperature = 0.0;
  int max_output_tokens = 2048;
};

struct ChatRequest {
  RoleTag role_tag = RoleTag::kTestModel;
  std::string system_context;
  std::vector<Message> messages;
  GenerationParams params;
  /// Stable label ("judge/t1/P001_S01/model-a/rate/a1") used to order the call
  /// log canonically. Not part of the digest.
  std::string call_key;

  /// Throws ConfigError unless messages alternate and end with the user.
  void validate() const;
  /// SHA-256 over role, system context, messages and generation params.
  std::string digest() const;
  json to_json() const;
  /// System context and messages flattened into one string.
  std::string rendered() const;
};

/// Convenience: a single-user-message request.
ChatRequest make_request(RoleTag role, std::string system_context, std::string user_text,
                         GenerationParams params, std::string call_key);

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

// ===========================================================================
// Backend configuration
// ===========================================================================

enum class BackendKind { kHttp, kScripted };

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
};

struct BackendConfig {
  BackendKind kind = BackendKind::kScripted;
  std::string model_id;
  // http
  std::string endpoint;             // base URL, e.g. https://host/v1
  std::string provider = "openai";  // wire dialect: openai | anthropic
  std::string auth_env_var;
  int timeout_ms = 120000;
  // scripted
  std::uint64_t seed = 0;
  std::string script_path;  // optional JSON script file
  bool synthetic = true;    // fall back to the built-in protocol responder
  int simulated_latency_ms = 0;
  int embedding_dim = 64;
  double embedding_noise = 0.05;
  // both
  RetryPolicy retry;
  int max_in_flight = 4;
  std::optional<GenerationParams> params;  // role defaults apply when unset

  void validate() const;
};

BackendConfig parse_backend_config(const json& raw, std::string_view where);
json to_json(const BackendConfig& c);

// ===========================================================================
// Call log
// ===========================================================================

struct CallRecord {
  std::string call_key;
  std::string role_tag;
  std::string model_id;
  std::string digest;
  std::int64_t latency_ms = 0;
  std::string outcome;  // "ok" | "error"
  int attempts = 0;
  json request;
  std::string reply;
  std::string error;

  json to_json() const;
  static CallRecord from_json(const json& j);
};

/// Append-only, thread-safe call log. Every terminal call (success or final
/// failure) yields exactly one record. Records go to an optional JSONL sink as
/// they arrive and are optionally retained in memory.
class CallLog {
 public:
  explicit CallLog(bool retain_in_memory = true) : retain_(retain_in_memory) {}

  void append(CallRecord record);
  void open_sink(const std::filesystem::path& path);
  /// Closes the sink and rewrites it ordered by call_key (stable), so files are
  /// independent of worker scheduling.
  void close_sink_canonical();

  std::vector<CallRecord> records() const;
  std::size_t size() const;
  void clear();

 private:
  mutable std::mutex mu_;
  bool retain_;
  std::vector<CallRecord> records_;
  std::optional<std::filesystem::path> sink_path_;
  std::ofstream sink_;
  std::size_t total_ = 0;
};

std::vector<CallRecord> read_call_log(const std::filesystem::path& path);

// ===========================================================================
// Backends
// ===========================================================================

/// Raised by backends for failures worth retrying (transport, 429, 5xx).
class TransientBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};

struct BackendReply {
  std::string text;
  /// Scripted backends report a simulated latency; http backends leave this
  /// empty and the client measures wall time.
  std::optional<std::int64_t> latency_ms;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendReply complete(const ChatRequest& request) = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);

// ===========================================================================
// Client
// ===========================================================================

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Counting semaphore bounding in-flight requests on one backend.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit) : available_(limit < 1 ? 1 : limit) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

/// Uniform handle on one configured backend: retries with exponential backoff,
/// bounds concurrency and logs every terminal call.
class ModelClient {
 public:
  ModelClient(BackendConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<CallLog> log,
              Sleeper sleeper = {});

  /// Returns the reply text. Throws BackendError after max_attempts.
  std::string chat(const ChatRequest& request);
  /// One vector per text, uniform dimension. Throws on an empty batch.
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts, const std::string& call_key);

  const BackendConfig& config() const { return config_; }
  const std::shared_ptr<CallLog>& log() const { return log_; }

 private:
  template <typename Fn>
  auto with_retry(Fn&& fn, int& attempts) -> decltype(fn());

  BackendConfig config_;
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<CallLog> log_;
  Sleeper sleeper_;
  std::shared_ptr<InFlightLimiter> limiter_;
};

std::shared_ptr<ModelClient> make_client(const BackendConfig& config, std::shared_ptr<CallLog> log,
                                         Sleeper sleeper = {});

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

}  // namespace coreflect
