#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coreflect/config.hpp"
#include "coreflect/gateway.hpp"
#include "coreflect/metrics.hpp"
#include "coreflect/model.hpp"
#include "coreflect/scripted_backend.hpp"

namespace fixtures {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "coreflect");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

coreflect::Persona persona(const std::string& id, const std::string& role = "Data analyst",
                           const std::string& clarity = "precise");
coreflect::Scenario scenario(const std::string& id, coreflect::TurnComplexity complexity = coreflect::TurnComplexity::kMedium,
                             const std::string& situation = "Preparing a quarterly summary.");

/// Backend answering every request through `fn`. Counts calls.
class FnBackend : public coreflect::Backend {
 public:
  using ChatFn = std::function<std::string(const coreflect::ChatRequest&)>;
  explicit FnBackend(ChatFn fn) : fn_(std::move(fn)) {}
  coreflect::BackendReply complete(const coreflect::ChatRequest& request) override;
  std::vector<coreflect::EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  int calls() const { return calls_; }

 private:
  ChatFn fn_;
  int calls_ = 0;
};

/// Client over a FnBackend with a no-op sleeper and an in-memory log.
struct FnClient {
  std::shared_ptr<FnBackend> backend;
  std::shared_ptr<coreflect::CallLog> log;
  std::shared_ptr<coreflect::ModelClient> client;
};
FnClient fn_client(FnBackend::ChatFn fn, int max_attempts = 3);

/// Scripted client (synthetic fallback on) with an in-memory log.
std::shared_ptr<coreflect::ModelClient> scripted_client(std::uint64_t seed, coreflect::Script script = {},
                                                        std::shared_ptr<coreflect::CallLog> log = nullptr,
                                                        bool synthetic = true);

// ---------------------------------------------------------------------------
// Published aggregate tables
// ---------------------------------------------------------------------------

struct ReferenceRow {
  const char* model;
  std::array<double, 6> rubric_means;  // ODI, DCA, FTP, AFM, OSF, SSA
  double tc_avg;
  double ucp_avg;
  double rating;
};

struct ReferenceTable {
  const char* name;
  std::vector<ReferenceRow> rows;
};

/// The three reference model-performance tables (final iteration, then the
/// first and second iterations).
const std::vector<ReferenceTable>& reference_tables();

/// Tensor over 100 instances whose per-rubric means are exactly `means`
/// (each mean must be a multiple of 0.01). Rubric order follows the default
/// rubric set.
coreflect::RatingTensor tensor_realizing(const std::vector<std::array<double, 6>>& means);

// ---------------------------------------------------------------------------
// End-to-end inputs
// ---------------------------------------------------------------------------

inline constexpr const char* kSentinel = "SENTINEL-7Q4XZ";

struct E2EOptions {
  int personas = 2;
  int scenarios = 2;
  int models = 2;
  int iterations = 2;
  std::uint64_t seed = 11;
  /// Plant kSentinel in each persona's preferences and each scenario's
  /// situation.
  bool sentinel = true;
};

/// Writes personas.json, scenarios.json and config.json into `dir` and
/// returns the config path. Every backend is scripted.
std::filesystem::path write_e2e_inputs(const std::filesystem::path& dir, const E2EOptions& options = {});

}  // namespace fixtures
