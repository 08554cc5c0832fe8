#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"

namespace coreflect {

struct ModelBinding {
  std::string id;  // used in file names: [A-Za-z0-9._-]+
  BackendConfig backend;
};

struct AnalysisConfig {
  double tier_fraction = 0.25;
  std::size_t per_tier_n = 20;
  int k_min = 2;
  int k_max = 8;
  int restarts = 8;
};

/// Backend-bound roles other than the test models.
inline const std::vector<std::string> kServiceRoles = {"verifier", "planner", "user_simulator",
                                                       "judge",    "analyzer", "embedder"};

struct RunConfig {
  int iterations = 3;
  std::uint64_t seed = 0;
  std::filesystem::path personas;
  std::filesystem::path scenarios;
  std::optional<std::filesystem::path> rubrics;  // shipped default set when absent
  std::size_t rubric_count = 6;
  std::vector<ModelBinding> models;
  std::map<std::string, BackendConfig> roles;  // every entry of kServiceRoles
  AnalysisConfig analysis;
  int rank_splits = 10;
  int max_workers = 4;
  double max_transport_failure_fraction = 0.5;

  const BackendConfig& role(const std::string& name) const;
  std::vector<std::string> model_ids() const;
};

/// Parses the JSON run configuration. Relative file paths resolve against
/// `base_dir`. A "default" entry under "roles" fills any role left unset.
RunConfig parse_run_config(const json& raw, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
json to_json(const RunConfig& config);

/// Generation parameters for a role: the backend's own when configured,
/// otherwise temperature 0 for judge and verifier and 0.7 for other roles.
GenerationParams role_params(const std::string& role, const BackendConfig& backend);

}  // namespace coreflect
