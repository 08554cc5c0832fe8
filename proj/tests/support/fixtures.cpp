#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <unistd.h>

#include "coreflect/util.hpp"

namespace fs = std::filesystem;
using namespace coreflect;

namespace fixtures {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Persona persona(const std::string& id, const std::string& role, const std::string& clarity) {
  Persona p;
  p.id = id;
  p.role = role;
  p.language = "English";
  p.traits = {"works with spreadsheets daily", "prefers examples"};
  p.tone = "direct";
  p.verbosity = "concise";
  p.quirks = {"numbers every question"};
  p.preferred_style = {"direct", "concise", "moderate", "task-focused", clarity};
  return p;
}

Scenario scenario(const std::string& id, TurnComplexity complexity, const std::string& situation) {
  Scenario s;
  s.id = id;
  s.title = "Summarize quarterly results " + id;
  s.intent_category = IntentCategory::kInstructional;
  s.situation = situation;
  s.core_task = "Write a one-page summary of the quarter.";
  s.turn_complexity = complexity;
  s.flow_type = "draft then refine";
  s.success_criteria = "A summary the user can send unchanged.";
  return s;
}

BackendReply FnBackend::complete(const ChatRequest& request) {
  ++calls_;
  return {fn_(request), 0};
}

std::vector<EmbeddingVector> FnBackend::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  for (const auto& t : texts) out.push_back({{static_cast<double>(t.size()), 1.0}});
  return out;
}

FnClient fn_client(FnBackend::ChatFn fn, int max_attempts) {
  FnClient c;
  c.backend = std::make_shared<FnBackend>(std::move(fn));
  c.log = std::make_shared<CallLog>(true);
  BackendConfig cfg;
  cfg.model_id = "fn-backend";
  cfg.retry.max_attempts = max_attempts;
  cfg.retry.base_backoff_ms = 1;
  c.client = std::make_shared<ModelClient>(cfg, c.backend, c.log, [](std::chrono::milliseconds) {});
  return c;
}

std::shared_ptr<ModelClient> scripted_client(std::uint64_t seed, Script script, std::shared_ptr<CallLog> log,
                                             bool synthetic) {
  BackendConfig cfg;
  cfg.model_id = "scripted-" + std::to_string(seed);
  cfg.seed = seed;
  cfg.synthetic = synthetic;
  cfg.embedding_dim = 16;
  cfg.retry.base_backoff_ms = 1;
  if (!log) log = std::make_shared<CallLog>(true);
  auto backend = std::make_shared<ScriptedBackend>(cfg, std::move(script),
                                                   synthetic ? synthetic_responder() : Responder{});
  return std::make_shared<ModelClient>(cfg, backend, log, [](std::chrono::milliseconds) {});
}

const std::vector<ReferenceTable>& reference_tables() {
  static const std::vector<ReferenceTable> kTables = {
      {"final iteration",
       {{"Claude Sonnet 4", {4.65, 4.76, 4.25, 4.75, 4.74, 4.73}, 4.56, 4.74, 4.65},
        {"Claude Sonnet 4.5", {4.37, 4.69, 3.53, 4.13, 4.68, 4.57}, 4.20, 4.46, 4.33},
        {"Claude Haiku 4.5", {4.02, 4.64, 3.16, 4.47, 4.57, 4.61}, 3.94, 4.55, 4.25},
        {"Qwen3-Next", {4.73, 4.03, 4.50, 4.62, 4.72, 4.70}, 4.42, 4.68, 4.55},
        {"DeepSeek-R1", {4.68, 4.65, 4.59, 4.60, 4.54, 4.54}, 4.64, 4.56, 4.60},
        {"Gemini 2.5 Pro", {4.86, 4.86, 4.70, 4.76, 4.86, 4.79}, 4.81, 4.80, 4.81},
        {"Gemini 2.5 Flash", {4.79, 4.72, 4.12, 4.70, 4.72, 4.76}, 4.60, 4.75, 4.68}}},
      {"iteration 1",
       {{"Claude Sonnet 4", {4.70, 4.75, 4.54, 4.73, 4.75, 4.76}, 4.66, 4.75, 4.71},
        {"Claude Sonnet 4.5", {4.60, 4.72, 4.39, 4.54, 4.70, 4.68}, 4.57, 4.64, 4.61},
        {"Claude Haiku 4.5", {4.55, 4.70, 4.29, 4.66, 4.68, 4.69}, 4.51, 4.68, 4.60},
        {"DeepSeek-R1", {4.72, 4.71, 4.67, 4.71, 4.68, 4.71}, 4.70, 4.70, 4.70},
        {"Qwen3-Next", {4.74, 4.51, 4.70, 4.71, 4.75, 4.75}, 4.65, 4.74, 4.70},
        {"Gemini 2.5 Pro", {4.79, 4.79, 4.74, 4.77, 4.79, 4.77}, 4.77, 4.78, 4.78},
        {"Gemini 2.5 Flash", {4.76, 4.74, 4.54, 4.72, 4.73, 4.76}, 4.68, 4.74, 4.71}}},
      {"iteration 2",
       {{"Claude Sonnet 4", {4.70, 4.79, 4.39, 4.77, 4.78, 4.79}, 4.63, 4.78, 4.71},
        {"Claude Sonnet 4.5", {4.52, 4.74, 3.99, 4.37, 4.73, 4.66}, 4.42, 4.59, 4.51},
        {"Claude Haiku 4.5", {4.32, 4.71, 3.75, 4.60, 4.66, 4.69}, 4.26, 4.65, 4.46},
        {"DeepSeek-R1", {4.72, 4.71, 4.63, 4.71, 4.66, 4.71}, 4.69, 4.69, 4.69},
        {"Qwen3-Next", {4.77, 4.30, 4.69, 4.70, 4.79, 4.78}, 4.59, 4.76, 4.68},
        {"Gemini 2.5 Pro", {4.88, 4.88, 4.78, 4.82, 4.88, 4.84}, 4.85, 4.85, 4.85},
        {"Gemini 2.5 Flash", {4.81, 4.77, 4.36, 4.72, 4.74, 4.80}, 4.65, 4.75, 4.70}}},
  };
  return kTables;
}

RatingTensor tensor_realizing(const std::vector<std::array<double, 6>>& means) {
  const auto rubrics = default_rubric_set();
  std::vector<std::string> instances, models, names;
  std::vector<Dimension> dims;
  for (int i = 0; i < 100; ++i) instances.push_back("I" + std::to_string(i));
  for (std::size_t j = 0; j < means.size(); ++j) models.push_back("M" + std::to_string(j));
  for (const auto& r : rubrics.rubrics) {
    names.push_back(r.name);
    dims.push_back(r.dimension);
  }
  RatingTensor t(1, instances, models, names, dims);
  for (std::size_t j = 0; j < means.size(); ++j) {
    for (std::size_t k = 0; k < 6; ++k) {
      // total = 100 * mean; split as `hi` ratings of base+1 and the rest base.
      const auto total = static_cast<int>(std::lround(means[j][k] * 100));
      const int base = total / 100;
      const int hi = total % 100;
      for (int i = 0; i < 100; ++i) t.set(i, j, k, i < hi ? base + 1 : base);
    }
  }
  return t;
}

fs::path write_e2e_inputs(const fs::path& dir, const E2EOptions& o) {
  fs::create_directories(dir);
  const std::string mark = o.sentinel ? std::string(" ") + kSentinel : "";
  json personas = json::array();
  for (int p = 1; p <= o.personas; ++p) {
    auto x = persona("P" + std::to_string(p), p % 2 ? "Data analyst" : "Product manager", "precise" + mark);
    personas.push_back(x);
  }
  json scenarios = json::array();
  const TurnComplexity complexities[] = {TurnComplexity::kShort, TurnComplexity::kMedium, TurnComplexity::kLong};
  for (int s = 1; s <= o.scenarios; ++s) {
    scenarios.push_back(scenario("S" + std::to_string(s), complexities[(s - 1) % 3],
                                 "Preparing a quarterly summary." + mark));
  }
  write_json(dir / "personas.json", personas);
  write_json(dir / "scenarios.json", scenarios);

  json models = json::array();
  for (int m = 1; m <= o.models; ++m) {
    models.push_back({{"id", "model-" + std::to_string(m)},
                      {"backend", {{"kind", "scripted"}, {"model_id", "scripted-m" + std::to_string(m)}, {"seed", m}}}});
  }
  json cfg{{"iterations", o.iterations},
           {"seed", o.seed},
           {"personas", "personas.json"},
           {"scenarios", "scenarios.json"},
           {"models", models},
           {"roles",
            {{"default", {{"kind", "scripted"}, {"model_id", "scripted-service"}, {"seed", 100}}},
             {"embedder", {{"kind", "scripted"}, {"model_id", "scripted-embedder"}, {"seed", 101},
                           {"embedding_dim", 32}, {"embedding_noise", 0.05}}}}},
           {"analysis", {{"tier_fraction", 0.25}, {"per_tier_n", 8}, {"k_min", 2}, {"k_max", 6}}},
           {"concurrency", {{"max_workers", 2}}}};
  write_json(dir / "config.json", cfg);
  return dir / "config.json";
}

}  // namespace fixtures
