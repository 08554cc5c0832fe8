#include "coreflect/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "coreflect/analyzer.hpp"
#include "coreflect/judge.hpp"
#include "coreflect/metrics.hpp"
#include "coreflect/parallel.hpp"
#include "coreflect/planner.hpp"
#include "coreflect/report.hpp"
#include "coreflect/simulator.hpp"

namespace fs = std::filesystem;

namespace coreflect {

// ---------------------------------------------------------------------------
// StageId / Manifest
// ---------------------------------------------------------------------------

namespace {

bool is_iteration_stage(const std::string& stage) {
  return std::find(kIterationStages.begin(), kIterationStages.end(), stage) != kIterationStages.end();
}

std::string tname(const std::string& stem, int t, const std::string& ext) {
  return stem + "-" + std::to_string(t) + ext;
}

json refs_to_json(const std::vector<ArtifactRef>& refs) {
  json out = json::array();
  for (const auto& r : refs) out.push_back({{"path", r.path}, {"sha256", r.sha256}});
  return out;
}

std::vector<ArtifactRef> refs_from_json(const json& j) {
  std::vector<ArtifactRef> out;
  for (const auto& r : j) out.push_back({r.at("path").get<std::string>(), r.at("sha256").get<std::string>()});
  return out;
}

}  // namespace

std::string StageId::str() const { return iteration > 0 ? stage + ":" + std::to_string(iteration) : stage; }

StageId StageId::parse(const std::string& text) {
  const auto colon = text.find(':');
  StageId id;
  id.stage = text.substr(0, colon);
  if (id.stage != "init" && id.stage != "build-dataset" && !is_iteration_stage(id.stage)) {
    throw ConfigError("unknown stage '" + id.stage + "'");
  }
  if (colon != std::string::npos) {
    try {
      id.iteration = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad stage iteration in '" + text + "'");
    }
    if (id.iteration < 1) throw ConfigError("stage iteration must be at least 1");
    if (!is_iteration_stage(id.stage)) throw ConfigError("stage '" + id.stage + "' takes no iteration");
  } else if (is_iteration_stage(id.stage)) {
    id.iteration = 1;
  }
  return id;
}

Manifest Manifest::load(const fs::path& run_dir) {
  Manifest m;
  const auto path = run_dir / "manifest.json";
  if (!fs::exists(path)) return m;
  const auto j = read_json(path);
  try {
    for (const auto& s : j.at("stages")) {
      m.stages_.push_back({{s.at("stage").get<std::string>(), s.at("iteration").get<int>()},
                           refs_from_json(s.at("artifacts"))});
    }
    m.checkpoints_ = refs_from_json(j.at("checkpoints"));
  } catch (const json::exception& e) {
    throw StageError("corrupt manifest: " + std::string(e.what()));
  }
  return m;
}

void Manifest::save(const fs::path& run_dir) const {
  json stages = json::array();
  for (const auto& e : stages_) {
    stages.push_back({{"stage", e.id.stage}, {"iteration", e.id.iteration}, {"artifacts", refs_to_json(e.artifacts)}});
  }
  write_json(run_dir / "manifest.json", json{{"stages", stages}, {"checkpoints", refs_to_json(checkpoints_)}});
}

bool Manifest::has(const StageId& id) const {
  return std::any_of(stages_.begin(), stages_.end(), [&](const Entry& e) { return e.id == id; });
}

void Manifest::record(const fs::path& run_dir, const StageId& id, const std::vector<std::string>& artifacts) {
  if (has(id)) throw StageError("stage " + id.str() + " is already recorded");
  Entry e{id, {}};
  for (const auto& a : artifacts) {
    for (const auto& other : stages_) {
      for (const auto& r : other.artifacts) {
        if (r.path == a) throw StageError(a + " is already owned by stage " + other.id.str());
      }
    }
    e.artifacts.push_back({a, sha256_file(run_dir / a)});
  }
  stages_.push_back(std::move(e));
}

void Manifest::record_checkpoint(const fs::path& run_dir, const std::string& path) {
  const auto hash = sha256_file(run_dir / path);
  for (auto& c : checkpoints_) {
    if (c.path == path) {
      c.sha256 = hash;
      return;
    }
  }
  checkpoints_.push_back({path, hash});
  std::sort(checkpoints_.begin(), checkpoints_.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
}

void Manifest::verify(const fs::path& run_dir) const {
  for (const auto& e : stages_) {
    for (const auto& r : e.artifacts) {
      if (!fs::exists(run_dir / r.path)) throw StageError(r.path + " recorded by " + e.id.str() + " is missing");
      if (sha256_file(run_dir / r.path) != r.sha256) {
        throw StageError(r.path + " recorded by " + e.id.str() + " was modified");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace {

// Owns the call log of one stage and canonicalizes it when the stage ends,
// whether or not it succeeded.
class StageLog {
 public:
  StageLog(const fs::path& run_dir, const std::string& relative) : relative_(relative) {
    log_ = std::make_shared<CallLog>(false);
    log_->open_sink(run_dir / relative);
  }
  ~StageLog() {
    try {
      log_->close_sink_canonical();
    } catch (const std::exception& e) {
      spdlog::error("could not finalize call log {}: {}", relative_, e.what());
    }
  }
  StageLog(const StageLog&) = delete;
  StageLog& operator=(const StageLog&) = delete;

  const std::shared_ptr<CallLog>& log() const { return log_; }
  void close() { log_->close_sink_canonical(); }
  const std::string& path() const { return relative_; }

 private:
  std::string relative_;
  std::shared_ptr<CallLog> log_;
};

std::shared_ptr<ModelClient> client_for(const BackendConfig& backend, const std::string& binding, std::uint64_t seed,
                                        const std::shared_ptr<CallLog>& log) {
  auto cfg = backend;
  if (cfg.kind == BackendKind::kScripted) {
    cfg.seed = derive_seed(seed, "backend/" + binding + "/" + std::to_string(backend.seed));
  }
  return make_client(cfg, log);
}

std::vector<Insight> read_insights(const fs::path& path) {
  std::vector<Insight> out;
  for (const auto& row : read_json(path)) out.push_back(row.get<Insight>());
  return out;
}

struct Inputs {
  std::map<std::string, Persona> personas;
  std::map<std::string, Scenario> scenarios;
  Dataset dataset;
};

Inputs load_inputs(const fs::path& run_dir) {
  Inputs in;
  for (auto& p : load_personas(run_dir / "inputs" / "personas.json")) in.personas.emplace(p.id, p);
  for (auto& s : load_scenarios(run_dir / "inputs" / "scenarios.json")) in.scenarios.emplace(s.id, s);
  in.dataset = read_dataset(run_dir);
  for (const auto& inst : in.dataset.instances) {
    if (!in.personas.count(inst.persona_ref) || !in.scenarios.count(inst.scenario_ref)) {
      throw SchemaError("dataset.jsonl", "instance " + inst.instance_id + " references an unknown persona or scenario");
    }
  }
  return in;
}

void copy_input(const fs::path& from, const fs::path& run_dir, const std::string& relative) {
  write_file(run_dir / relative, read_file(from));
}

}  // namespace

std::string directory_digest(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    entries.emplace_back(fs::relative(e.path(), dir).generic_string(), sha256_file(e.path()));
  }
  std::sort(entries.begin(), entries.end());
  std::string blob;
  for (const auto& [path, hash] : entries) blob += path + '\0' + hash + '\n';
  return sha256_hex(blob);
}

std::string default_run_dir_name() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream out;
  out << "run-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return out.str();
}

Dataset build_dataset_to(const fs::path& out_dir, const fs::path& personas_path, const fs::path& scenarios_path,
                         const BackendConfig& verifier, int max_workers, double max_transport_failure_fraction) {
  const auto personas = load_personas(personas_path);
  const auto scenarios = load_scenarios(scenarios_path);
  StageLog log(out_dir, "calls/build-dataset.jsonl");
  auto client = make_client(verifier, log.log());
  BuildOptions opts;
  opts.max_in_flight = max_workers;
  opts.max_transport_failure_fraction = max_transport_failure_fraction;
  opts.params = role_params("verifier", verifier);
  auto ds = build_dataset(personas, scenarios, *client, opts);
  write_dataset(out_dir, ds);
  write_file(out_dir / "verifier-prompt.txt", verifier_prompt_template() + "\n");
  log.close();
  return ds;
}

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

Orchestrator::Orchestrator(fs::path run_dir, const std::optional<RunConfig>& config, const RunOptions& options)
    : run_dir_(std::move(run_dir)), options_(options) {
  if (fs::exists(run_dir_ / "config.json")) {
    config_ = load_run_config(run_dir_ / "config.json");
    manifest_ = Manifest::load(run_dir_);
    if (!manifest_.has({"init", 0})) throw StageError(run_dir_.string() + " has a config but no completed init stage");
    if (!options_.models.empty()) {
      auto requested = options_.models;
      auto configured = config_.model_ids();
      std::sort(requested.begin(), requested.end());
      std::sort(configured.begin(), configured.end());
      if (requested != configured) throw ConfigError("--models can only be narrowed when the run is created");
    }
    if (options_.seed && *options_.seed != config_.seed) {
      throw ConfigError("--seed differs from the seed this run was created with");
    }
    seed_ = config_.seed;
    return;
  }
  if (fs::exists(run_dir_) && !fs::is_empty(run_dir_)) {
    throw ConfigError(run_dir_.string() + " exists and is not a run directory");
  }
  if (!config) throw ConfigError("a configuration (--config) is required to create " + run_dir_.string());
  init(*config);
}

void Orchestrator::init(const RunConfig& source) {
  RunConfig cfg = source;
  if (options_.seed) cfg.seed = *options_.seed;
  if (!options_.models.empty()) {
    std::vector<ModelBinding> chosen;
    for (const auto& id : options_.models) {
      const auto it = std::find_if(cfg.models.begin(), cfg.models.end(), [&](const auto& m) { return m.id == id; });
      if (it == cfg.models.end()) throw ConfigError("--models names unknown model '" + id + "'");
      chosen.push_back(*it);
    }
    cfg.models = std::move(chosen);
  }

  // Validate before writing anything.
  load_personas(cfg.personas);
  load_scenarios(cfg.scenarios);
  RubricSet rubrics = cfg.rubrics ? load_rubric_set(*cfg.rubrics, cfg.rubric_count) : default_rubric_set();
  if (rubrics.size() != cfg.rubric_count) {
    throw ConfigError("rubric set has " + std::to_string(rubrics.size()) + " rubrics, expected " +
                      std::to_string(cfg.rubric_count));
  }
  rubrics.iteration = 1;

  fs::create_directories(run_dir_);
  std::vector<std::string> artifacts;
  copy_input(cfg.personas, run_dir_, "inputs/personas.json");
  copy_input(cfg.scenarios, run_dir_, "inputs/scenarios.json");
  artifacts = {"inputs/personas.json", "inputs/scenarios.json"};
  cfg.personas = "inputs/personas.json";
  cfg.scenarios = "inputs/scenarios.json";
  if (cfg.rubrics) {
    copy_input(*cfg.rubrics, run_dir_, "inputs/rubrics.json");
    artifacts.push_back("inputs/rubrics.json");
    cfg.rubrics = "inputs/rubrics.json";
  }
  auto localize_script = [&](BackendConfig& b, const std::string& name) {
    if (b.script_path.empty()) return;
    const auto rel = "inputs/scripts/" + name + ".json";
    copy_input(b.script_path, run_dir_, rel);
    artifacts.push_back(rel);
    b.script_path = rel;
  };
  for (auto& m : cfg.models) localize_script(m.backend, "model-" + m.id);
  for (auto& [role, b] : cfg.roles) localize_script(b, "role-" + role);

  write_json(run_dir_ / "config.json", to_json(cfg));
  write_json(run_dir_ / "rubrics-1.json", json(rubrics));
  artifacts.insert(artifacts.begin(), "config.json");
  artifacts.push_back("rubrics-1.json");

  config_ = load_run_config(run_dir_ / "config.json");
  seed_ = config_.seed;
  finish({"init", 0}, artifacts);
}

void Orchestrator::require(const StageId& id) const {
  if (!manifest_.has(id)) throw StageError("stage " + id.str() + " has not completed");
}

void Orchestrator::write_state(int t) {
  RunState state;
  state.iteration = t;
  const auto rubrics_path = run_dir_ / tname("rubrics", t, ".json");
  state.rubric_set = load_rubric_set(rubrics_path);
  if (t > 1) state.insight_set = read_insights(run_dir_ / tname("insights", t - 1, ".json"));
  state.dataset_ref = "dataset.jsonl";
  state.random_seed = seed_;
  for (const auto& e : manifest_.stages()) {
    if (e.id.iteration == 0 || e.id.iteration == t) state.completed_stages.push_back(e.id.str());
  }
  write_json(run_dir_ / tname("state", t, ".json"), json(state));
  manifest_.record_checkpoint(run_dir_, tname("state", t, ".json"));
}

void Orchestrator::finish(const StageId& id, const std::vector<std::string>& artifacts) {
  manifest_.record(run_dir_, id, artifacts);
  write_state(std::max(1, id.iteration));
  manifest_.save(run_dir_);
  spdlog::info("stage {} complete ({} artifacts)", id.str(), artifacts.size());
}

bool Orchestrator::run() {
  if (options_.resume) manifest_.verify(run_dir_);
  std::vector<StageId> plan = {{"build-dataset", 0}};
  for (int t = 1; t <= config_.iterations; ++t) {
    for (const auto& s : kIterationStages) plan.push_back({s, t});
  }
  const bool fresh = manifest_.stages().size() == 1;
  if (!fresh && !options_.resume) {
    throw ConfigError(run_dir_.string() + " already holds a run; pass --resume to continue it");
  }
  for (const auto& id : plan) {
    if (manifest_.has(id)) continue;
    run_stage(id);
    if (options_.halt_after && *options_.halt_after == id) {
      spdlog::info("halting after {}", id.str());
      return false;
    }
  }
  return true;
}

void Orchestrator::run_stage(const StageId& id) {
  if (manifest_.has(id)) {
    if (options_.resume) {
      spdlog::info("stage {} already complete; skipping", id.str());
      return;
    }
    throw StageError("stage " + id.str() + " already completed; pass --resume to skip it");
  }
  if (id.iteration > config_.iterations) {
    throw ConfigError("iteration " + std::to_string(id.iteration) + " exceeds the configured " +
                      std::to_string(config_.iterations));
  }
  spdlog::info("stage {} starting", id.str());
  std::vector<std::string> artifacts;
  if (id.stage == "build-dataset") {
    artifacts = stage_build_dataset();
  } else if (id.stage == "plan") {
    artifacts = stage_plan(id.iteration);
  } else if (id.stage == "simulate") {
    artifacts = stage_simulate(id.iteration);
  } else if (id.stage == "judge") {
    artifacts = stage_judge(id.iteration);
  } else if (id.stage == "metrics") {
    artifacts = stage_metrics(id.iteration);
  } else if (id.stage == "reflect") {
    artifacts = stage_reflect(id.iteration);
  } else {
    throw StageError("stage " + id.str() + " cannot be run directly");
  }
  finish(id, artifacts);
}

std::vector<std::string> Orchestrator::stage_build_dataset() {
  require({"init", 0});
  const auto ds = build_dataset_to(run_dir_, run_dir_ / "inputs/personas.json", run_dir_ / "inputs/scenarios.json",
                                   config_.role("verifier"), config_.max_workers,
                                   config_.max_transport_failure_fraction);
  if (ds.instances.empty()) throw InsufficientData("the consistency check accepted no persona-scenario pairs");
  spdlog::info("dataset: {} of {} pairs accepted", ds.provenance.accepted, ds.provenance.candidates);
  return {"dataset.jsonl", "dataset.meta.json", "verifier-prompt.txt", "calls/build-dataset.jsonl"};
}

std::vector<std::string> Orchestrator::stage_plan(int t) {
  require({"build-dataset", 0});
  if (t > 1) require({"reflect", t - 1});
  const auto in = load_inputs(run_dir_);
  const auto rubrics = load_rubric_set(run_dir_ / tname("rubrics", t, ".json"), config_.rubric_count);
  const auto insights = t > 1 ? read_insights(run_dir_ / tname("insights", t - 1, ".json")) : std::vector<Insight>{};

  const auto log_path = "calls/" + tname("plan", t, ".jsonl");
  StageLog log(run_dir_, log_path);
  const auto& backend = config_.role("planner");
  auto planner = client_for(backend, "planner", seed_, log.log());
  const auto params = role_params("planner", backend);

  const auto& instances = in.dataset.instances;
  std::vector<ConversationTemplate> templates(instances.size());
  parallel_for(instances.size(), config_.max_workers, [&](std::size_t i) {
    const auto& inst = instances[i];
    templates[i] = plan_template(inst, in.personas.at(inst.persona_ref), in.scenarios.at(inst.scenario_ref), rubrics,
                                 insights, *planner, t, params);
  });

  if (t > 1) {
    std::map<std::string, int> previous;
    for (const auto& p : read_templates(run_dir_ / tname("templates", t - 1, ".jsonl"))) {
      previous[p.instance_ref] = p.turn_count;
    }
    for (const auto& tmpl : templates) {
      const auto it = previous.find(tmpl.instance_ref);
      if (it != previous.end() && it->second != tmpl.turn_count) {
        spdlog::info("{}: turn count {} -> {}", tmpl.instance_ref, it->second, tmpl.turn_count);
      }
    }
  }
  const auto out = tname("templates", t, ".jsonl");
  write_templates(run_dir_ / out, templates);
  log.close();
  return {out, log_path};
}

std::vector<std::string> Orchestrator::stage_simulate(int t) {
  require({"plan", t});
  const auto in = load_inputs(run_dir_);
  std::map<std::string, ConversationTemplate> templates;
  for (auto& tmpl : read_templates(run_dir_ / tname("templates", t, ".jsonl"))) {
    templates.emplace(tmpl.instance_ref, std::move(tmpl));
  }

  const auto log_path = "calls/" + tname("simulate", t, ".jsonl");
  StageLog log(run_dir_, log_path);
  const auto& sim_backend = config_.role("user_simulator");
  auto simulator = client_for(sim_backend, "user_simulator", seed_, log.log());
  std::vector<std::shared_ptr<ModelClient>> models;
  for (const auto& m : config_.models) models.push_back(client_for(m.backend, "model/" + m.id, seed_, log.log()));

  const auto dir = run_dir_ / tname("conversations", t, "");
  const auto& instances = in.dataset.instances;
  const auto n = instances.size();
  std::vector<Conversation> conversations(n * models.size());
  parallel_for(conversations.size(), config_.max_workers, [&](std::size_t cell) {
    const auto j = cell / n;
    const auto& inst = instances[cell % n];
    const auto& model_id = config_.models[j].id;
    SimulationParams params;
    params.simulator = role_params("user_simulator", sim_backend);
    params.test_model = role_params("test_model", config_.models[j].backend);
    params.partial_path = dir / "partial" / model_id / (inst.instance_id + ".json");
    conversations[cell] = simulate_conversation(inst, in.personas.at(inst.persona_ref),
                                                in.scenarios.at(inst.scenario_ref), templates.at(inst.instance_id),
                                                *simulator, *models[j], model_id, params);
  });

  std::vector<std::string> artifacts;
  for (std::size_t j = 0; j < models.size(); ++j) {
    const std::vector<Conversation> rows(conversations.begin() + static_cast<std::ptrdiff_t>(j * n),
                                         conversations.begin() + static_cast<std::ptrdiff_t>((j + 1) * n));
    const auto rel = tname("conversations", t, "") + "/" + config_.models[j].id + ".jsonl";
    write_conversations(run_dir_ / rel, rows);
    artifacts.push_back(rel);
  }
  fs::remove_all(dir / "partial");
  log.close();
  artifacts.push_back(log_path);
  return artifacts;
}

std::vector<std::string> Orchestrator::stage_judge(int t) {
  require({"simulate", t});
  const auto in = load_inputs(run_dir_);
  const auto rubrics = load_rubric_set(run_dir_ / tname("rubrics", t, ".json"), config_.rubric_count);
  std::map<std::string, ConversationTemplate> templates;
  for (auto& tmpl : read_templates(run_dir_ / tname("templates", t, ".jsonl"))) {
    templates.emplace(tmpl.instance_ref, std::move(tmpl));
  }
  std::vector<Conversation> conversations;
  for (const auto& m : config_.models) {
    auto rows = read_conversations(run_dir_ / (tname("conversations", t, "") + "/" + m.id + ".jsonl"));
    conversations.insert(conversations.end(), rows.begin(), rows.end());
  }

  const auto log_path = "calls/" + tname("judge", t, ".jsonl");
  StageLog log(run_dir_, log_path);
  const auto& backend = config_.role("judge");
  auto judge = client_for(backend, "judge", seed_, log.log());
  const auto params = role_params("judge", backend);

  std::map<std::string, const Instance*> instance_by_id;
  for (const auto& inst : in.dataset.instances) instance_by_id[inst.instance_id] = &inst;
  std::vector<EvaluationRecord> records(conversations.size());
  parallel_for(conversations.size(), config_.max_workers, [&](std::size_t i) {
    const auto& c = conversations[i];
    const auto* inst = instance_by_id.at(c.instance_ref);
    records[i] = evaluate_conversation(c, templates.at(c.instance_ref), in.personas.at(inst->persona_ref),
                                       in.scenarios.at(inst->scenario_ref), rubrics, *judge, params);
  });

  std::vector<std::string> artifacts;
  for (const auto& m : config_.models) {
    std::vector<EvaluationRecord> rows;
    std::copy_if(records.begin(), records.end(), std::back_inserter(rows),
                 [&](const EvaluationRecord& r) { return r.model_ref == m.id; });
    const auto rel = tname("evaluations", t, "") + "/" + m.id + ".jsonl";
    write_evaluations(run_dir_ / rel, rows);
    artifacts.push_back(rel);
  }
  log.close();
  artifacts.push_back(log_path);
  return artifacts;
}

std::vector<std::string> Orchestrator::stage_metrics(int t) {
  require({"judge", t});
  const auto in = load_inputs(run_dir_);
  const auto rubrics = load_rubric_set(run_dir_ / tname("rubrics", t, ".json"), config_.rubric_count);
  std::vector<EvaluationRecord> records;
  std::map<std::pair<std::string, std::string>, int> turns;
  for (const auto& m : config_.models) {
    auto rows = read_evaluations(run_dir_ / (tname("evaluations", t, "") + "/" + m.id + ".jsonl"));
    records.insert(records.end(), rows.begin(), rows.end());
    for (const auto& c : read_conversations(run_dir_ / (tname("conversations", t, "") + "/" + m.id + ".jsonl"))) {
      turns[{c.instance_ref, c.model_ref}] = c.user_turn_count;
    }
  }
  std::vector<std::string> instance_ids;
  for (const auto& inst : in.dataset.instances) instance_ids.push_back(inst.instance_id);
  const auto tensor = RatingTensor::from_evaluations(records, rubrics, instance_ids, config_.model_ids());

  std::vector<std::vector<int>> user_turns;
  for (const auto& id : instance_ids) {
    std::vector<int> row;
    for (const auto& m : config_.models) row.push_back(turns.at({id, m.id}));
    user_turns.push_back(std::move(row));
  }
  auto metrics = compute_iteration_metrics(tensor, user_turns, derive_seed(seed_, "rank/t" + std::to_string(t)),
                                           config_.rank_splits);

  // Dataset summary by scenario category, from this iteration's templates.
  std::map<std::string, int> planned;
  for (const auto& tmpl : read_templates(run_dir_ / tname("templates", t, ".jsonl"))) {
    planned[tmpl.instance_ref] = tmpl.turn_count;
  }
  std::set<std::string> all_personas;
  double all_turns = 0.0;
  for (auto cat : {IntentCategory::kInformational, IntentCategory::kInstructional, IntentCategory::kInteractive,
                   IntentCategory::kOperational}) {
    std::set<std::string> personas;
    CategoryStats row{std::string(to_string(cat)), 0, 0, 0.0};
    double sum = 0.0;
    for (const auto& inst : in.dataset.instances) {
      if (in.scenarios.at(inst.scenario_ref).intent_category != cat) continue;
      personas.insert(inst.persona_ref);
      all_personas.insert(inst.persona_ref);
      ++row.validated_pairs;
      sum += planned.at(inst.instance_id);
    }
    if (row.validated_pairs == 0) continue;
    all_turns += sum;
    row.personas = personas.size();
    row.avg_turns = sum / static_cast<double>(row.validated_pairs);
    metrics.dataset_summary.push_back(row);
  }
  metrics.dataset_summary.push_back({"Total", all_personas.size(), in.dataset.instances.size(),
                                     all_turns / static_cast<double>(in.dataset.instances.size())});

  const auto out = tname("metrics", t, ".json");
  write_json(run_dir_ / out, to_json(metrics));
  const auto files = write_report(run_dir_, t);
  auto rel = [&](const fs::path& p) { return fs::relative(p, run_dir_).generic_string(); };
  return {out, rel(files.report), rel(files.length_csv), rel(files.refinement_csv)};
}

std::vector<std::string> Orchestrator::stage_reflect(int t) {
  require({"metrics", t});
  const auto rubrics = load_rubric_set(run_dir_ / tname("rubrics", t, ".json"), config_.rubric_count);
  std::vector<EvaluationRecord> records;
  for (const auto& m : config_.models) {
    auto rows = read_evaluations(run_dir_ / (tname("evaluations", t, "") + "/" + m.id + ".jsonl"));
    records.insert(records.end(), rows.begin(), rows.end());
  }

  const auto partition = partition_tiers(records, config_.analysis.tier_fraction);
  auto n = config_.analysis.per_tier_n;
  const auto smallest = std::min(partition.high.size(), partition.low.size());
  if (n > smallest) {
    spdlog::warn("per-tier sample size {} exceeds the smaller tier ({}); using {}", n, smallest, smallest);
    n = smallest;
  }
  const auto pool = sample_balanced(partition, records, n, derive_seed(seed_, "sample/t" + std::to_string(t)));

  const auto log_path = "calls/" + tname("reflect", t, ".jsonl");
  StageLog log(run_dir_, log_path);
  auto embedder = client_for(config_.role("embedder"), "embedder", seed_, log.log());
  const auto& analyzer_backend = config_.role("analyzer");
  auto analyzer = client_for(analyzer_backend, "analyzer", seed_, log.log());
  const auto params = role_params("analyzer", analyzer_backend);

  ClusterParams cp;
  cp.k_min = config_.analysis.k_min;
  cp.k_max = config_.analysis.k_max;
  cp.restarts = config_.analysis.restarts;
  cp.seed = derive_seed(seed_, "cluster/t" + std::to_string(t));
  const auto discovery = discover_families(pool, *embedder, cp, t);
  const auto insights = synthesize_insights(discovery.families, *analyzer, t, params);
  const auto update = update_rubrics(rubrics, insights, discovery.families, *analyzer, params);

  const auto families_out = tname("families", t, ".json");
  const auto insights_out = tname("insights", t, ".json");
  const auto rubrics_out = tname("rubrics", t + 1, ".json");
  const auto changelog_out = tname("rubric-changelog", t, ".json");
  write_json(run_dir_ / families_out, families_to_json(discovery.families, discovery));
  write_json(run_dir_ / insights_out, json(insights));
  write_json(run_dir_ / rubrics_out, json(update.rubrics));
  write_json(run_dir_ / changelog_out, changelog_to_json(update.changelog, t));
  log.close();
  return {families_out, insights_out, rubrics_out, changelog_out, log_path};
}

}  // namespace coreflect
