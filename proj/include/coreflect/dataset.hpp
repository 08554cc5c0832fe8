#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"
#include "coreflect/model.hpp"

namespace coreflect {

enum class Verdict { kPending, kAccepted, kRejected };
std::string_view to_string(Verdict v);

struct CandidatePair {
  std::string persona_ref;
  std::string scenario_ref;
  Verdict verdict = Verdict::kPending;
  std::string verdict_raw;
};

struct Provenance {
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  bool operator==(const Provenance&) const = default;
};

struct RejectedPair {
  std::string persona_ref;
  std::string scenario_ref;
  std::string verdict_raw;
};

/// Validated persona-scenario pairs.
struct Dataset {
  std::vector<Instance> instances;
  Provenance provenance;
  std::vector<RejectedPair> rejected;
};

/// Instance id for a pair: "<persona>_<scenario>".
std::string instance_id_for(std::string_view persona_id, std::string_view scenario_id);

/// Full cross product, persona-major, all verdicts pending.
std::vector<CandidatePair> generate_candidate_pairs(const std::vector<Persona>& personas,
                                                    const std::vector<Scenario>& scenarios);

/// The verifier prompt with {role}, {title} and {core_task} placeholders.
const std::string& verifier_prompt_template();
ChatRequest verifier_request(const Persona& persona, const Scenario& scenario, GenerationParams params);

/// Asks the verifier whether the pair is plausible. The whole trimmed reply must
/// be "yes" or "no" (case-insensitive); anything else gets one stricter
/// re-prompt, then MalformedVerdict.
CandidatePair check_consistency(CandidatePair pair, const Persona& persona, const Scenario& scenario,
                                ModelClient& verifier, GenerationParams params = {});

struct BuildOptions {
  int max_in_flight = 4;
  /// Abort when more than this fraction of verifier calls fail at the
  /// transport level.
  double max_transport_failure_fraction = 0.5;
  GenerationParams params;  // temperature 0 by default
};

/// Runs the consistency check over the cross product and keeps accepted pairs.
/// Transport failures are retried in a second pass; any pair still failing
/// aborts the build.
Dataset build_dataset(const std::vector<Persona>& personas, const std::vector<Scenario>& scenarios,
                      ModelClient& verifier, const BuildOptions& options = {});

/// dataset.jsonl (one Instance per line) and dataset.meta.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace coreflect
