#include "coreflect/config.hpp"

#include <algorithm>
#include <regex>
#include <set>

namespace coreflect {

const BackendConfig& RunConfig::role(const std::string& name) const {
  const auto it = roles.find(name);
  if (it == roles.end()) throw ConfigError("no backend bound to role '" + name + "'");
  return it->second;
}

std::vector<std::string> RunConfig::model_ids() const {
  std::vector<std::string> ids;
  for (const auto& m : models) ids.push_back(m.id);
  return ids;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

BackendConfig parse_backend(const json& raw, const std::string& where, const std::filesystem::path& base) {
  auto c = parse_backend_config(raw, where);
  if (!c.script_path.empty()) c.script_path = resolve(base, c.script_path).string();
  return c;
}

}  // namespace

RunConfig parse_run_config(const json& raw, const std::filesystem::path& base_dir) {
  if (!raw.is_object()) throw ConfigError("run configuration must be a JSON object");
  static const std::set<std::string> kKnown = {"iterations", "seed",   "personas",    "scenarios",
                                               "rubrics",    "rubric_count", "models", "roles",
                                               "analysis",   "metrics", "concurrency", "dataset"};
  for (auto it = raw.begin(); it != raw.end(); ++it) {
    if (!kKnown.count(it.key())) throw ConfigError("unknown configuration key '" + it.key() + "'");
  }
  RunConfig c;
  try {
    c.iterations = raw.value("iterations", 3);
    c.seed = raw.value("seed", std::uint64_t{0});
    if (!raw.contains("personas") || !raw.contains("scenarios")) {
      throw ConfigError("configuration needs 'personas' and 'scenarios' files");
    }
    c.personas = resolve(base_dir, raw.at("personas").get<std::string>());
    c.scenarios = resolve(base_dir, raw.at("scenarios").get<std::string>());
    if (raw.contains("rubrics") && !raw["rubrics"].is_null()) {
      c.rubrics = resolve(base_dir, raw["rubrics"].get<std::string>());
    }
    c.rubric_count = raw.value("rubric_count", std::size_t{6});

    static const std::regex kModelId("[A-Za-z0-9._-]+");
    std::set<std::string> seen;
    for (const auto& m : raw.value("models", json::array())) {
      ModelBinding b;
      b.id = m.at("id").get<std::string>();
      if (!std::regex_match(b.id, kModelId)) throw ConfigError("model id '" + b.id + "' must match [A-Za-z0-9._-]+");
      if (!seen.insert(b.id).second) throw ConfigError("duplicate model id '" + b.id + "'");
      b.backend = parse_backend(m.at("backend"), "models." + b.id, base_dir);
      c.models.push_back(std::move(b));
    }

    const auto roles = raw.value("roles", json::object());
    for (auto it = roles.begin(); it != roles.end(); ++it) {
      if (it.key() != "default" &&
          std::find(kServiceRoles.begin(), kServiceRoles.end(), it.key()) == kServiceRoles.end()) {
        throw ConfigError("unknown role '" + it.key() + "'");
      }
    }
    for (const auto& role : kServiceRoles) {
      if (roles.contains(role)) {
        c.roles[role] = parse_backend(roles[role], "roles." + role, base_dir);
      } else if (roles.contains("default")) {
        c.roles[role] = parse_backend(roles["default"], "roles.default", base_dir);
      } else {
        throw ConfigError("no backend bound to role '" + role + "'");
      }
    }

    const auto analysis = raw.value("analysis", json::object());
    c.analysis.tier_fraction = analysis.value("tier_fraction", 0.25);
    c.analysis.per_tier_n = analysis.value("per_tier_n", std::size_t{20});
    c.analysis.k_min = analysis.value("k_min", 2);
    c.analysis.k_max = analysis.value("k_max", 8);
    c.analysis.restarts = analysis.value("restarts", 8);
    c.rank_splits = raw.value("metrics", json::object()).value("rank_splits", 10);
    c.max_workers = raw.value("concurrency", json::object()).value("max_workers", 4);
    c.max_transport_failure_fraction =
        raw.value("dataset", json::object()).value("max_transport_failure_fraction", 0.5);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }

  if (c.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (c.models.empty()) throw ConfigError("at least one test model is required");
  if (!(c.analysis.tier_fraction > 0.0 && c.analysis.tier_fraction <= 0.5)) {
    throw ConfigError("analysis.tier_fraction must be in (0, 0.5]");
  }
  if (c.analysis.per_tier_n < 1) throw ConfigError("analysis.per_tier_n must be at least 1");
  if (c.analysis.k_min < 1 || c.analysis.k_max < c.analysis.k_min) {
    throw ConfigError("analysis cluster bounds must satisfy 1 <= k_min <= k_max");
  }
  if (c.rank_splits < 1) throw ConfigError("metrics.rank_splits must be at least 1");
  if (c.max_workers < 1) throw ConfigError("concurrency.max_workers must be at least 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json raw;
  try {
    raw = read_json(path);
  } catch (const SchemaError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(raw, path.parent_path());
}

json to_json(const RunConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back({{"id", m.id}, {"backend", to_json(m.backend)}});
  json roles = json::object();
  for (const auto& [name, backend] : c.roles) roles[name] = to_json(backend);
  json j{{"iterations", c.iterations},
         {"seed", c.seed},
         {"personas", c.personas.string()},
         {"scenarios", c.scenarios.string()},
         {"rubric_count", c.rubric_count},
         {"models", models},
         {"roles", roles},
         {"analysis",
          {{"tier_fraction", c.analysis.tier_fraction},
           {"per_tier_n", c.analysis.per_tier_n},
           {"k_min", c.analysis.k_min},
           {"k_max", c.analysis.k_max},
           {"restarts", c.analysis.restarts}}},
         {"metrics", {{"rank_splits", c.rank_splits}}},
         {"concurrency", {{"max_workers", c.max_workers}}},
         {"dataset", {{"max_transport_failure_fraction", c.max_transport_failure_fraction}}}};
  if (c.rubrics) j["rubrics"] = c.rubrics->string();
  return j;
}

GenerationParams role_params(const std::string& role, const BackendConfig& backend) {
  if (backend.params) return *backend.params;
  GenerationParams p;
  p.temperature = (role == "judge" || role == "verifier") ? 0.0 : 0.7;
  return p;
}

}  // namespace coreflect
