#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/config.hpp"
#include "coreflect/dataset.hpp"

namespace coreflect {

/// Stage names in execution order. "init" and "build-dataset" run once; the
/// rest run once per iteration.
inline const std::vector<std::string> kIterationStages = {"plan", "simulate", "judge", "metrics", "reflect"};

struct StageId {
  std::string stage;
  int iteration = 0;  // 0 for run-level stages
  std::string str() const;
  static StageId parse(const std::string& text);  // "judge" or "judge:2"
  bool operator==(const StageId&) const = default;
};

struct ArtifactRef {
  std::string path;  // relative to the run directory
  std::string sha256;
};

/// manifest.json: every stage's outputs plus rolling checkpoint files. Holds
/// no timestamps, so identical runs produce identical manifests.
class Manifest {
 public:
  static Manifest load(const std::filesystem::path& run_dir);
  void save(const std::filesystem::path& run_dir) const;

  bool has(const StageId& id) const;
  void record(const std::filesystem::path& run_dir, const StageId& id, const std::vector<std::string>& artifacts);
  void record_checkpoint(const std::filesystem::path& run_dir, const std::string& path);
  /// Throws StageError when a recorded artifact is missing or altered.
  void verify(const std::filesystem::path& run_dir) const;

  struct Entry {
    StageId id;
    std::vector<ArtifactRef> artifacts;
  };
  const std::vector<Entry>& stages() const { return stages_; }
  const std::vector<ArtifactRef>& checkpoints() const { return checkpoints_; }

 private:
  std::vector<Entry> stages_;
  std::vector<ArtifactRef> checkpoints_;
};

struct RunOptions {
  bool resume = false;
  /// Stop cleanly after this stage completes (fault injection and stepping).
  std::optional<StageId> halt_after;
  std::optional<std::uint64_t> seed;
  /// Restricts the configured models; only valid when the run is created.
  std::vector<std::string> models;
};

/// A run directory bound to its configuration.
class Orchestrator {
 public:
  /// Creates (init stage) or reopens a run directory. `config` is required
  /// for a new directory and ignored for an existing one, whose config.json
  /// is authoritative.
  Orchestrator(std::filesystem::path run_dir, const std::optional<RunConfig>& config, const RunOptions& options);

  /// Runs every remaining stage for t = 1..T. Returns false when halted early.
  bool run();
  /// Runs one stage. A stage already in the manifest is skipped with
  /// `resume` and an error without.
  void run_stage(const StageId& id);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }
  const Manifest& manifest() const { return manifest_; }

 private:
  void init(const RunConfig& config);
  void require(const StageId& id) const;
  void finish(const StageId& id, const std::vector<std::string>& artifacts);
  void write_state(int iteration);

  std::vector<std::string> stage_build_dataset();
  std::vector<std::string> stage_plan(int t);
  std::vector<std::string> stage_simulate(int t);
  std::vector<std::string> stage_judge(int t);
  std::vector<std::string> stage_metrics(int t);
  std::vector<std::string> stage_reflect(int t);

  std::filesystem::path run_dir_;
  RunConfig config_;
  RunOptions options_;
  Manifest manifest_;
  std::uint64_t seed_ = 0;
};

/// Standalone dataset build into `out_dir` (dataset files, verifier prompt
/// and call log).
Dataset build_dataset_to(const std::filesystem::path& out_dir, const std::filesystem::path& personas_path,
                         const std::filesystem::path& scenarios_path, const BackendConfig& verifier,
                         int max_workers, double max_transport_failure_fraction);

/// SHA-256 over the sorted (relative path, file SHA-256) pairs of every file.
std::string directory_digest(const std::filesystem::path& dir);

/// "run-YYYYMMDD-HHMMSS" in local time.
std::string default_run_dir_name();

}  // namespace coreflect
