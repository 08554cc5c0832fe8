#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"
#include "coreflect/model.hpp"

namespace coreflect {

inline constexpr const char* kInitiationTurnType = "Early Turn";

struct TurnInstruction {
  int index = 1;
  std::string turn_type;
  std::string turn_intent;
  std::string instruction_for_eval;

  bool operator==(const TurnInstruction&) const = default;
};

struct ConversationTemplate {
  std::string instance_ref;
  int iteration = 1;
  int turn_count = 0;
  std::vector<TurnInstruction> instructions;
  std::vector<std::string> insights_used;

  bool operator==(const ConversationTemplate&) const = default;
};

void to_json(json& j, const TurnInstruction& v);
void to_json(json& j, const ConversationTemplate& v);
void from_json(const json& j, ConversationTemplate& v);

/// Throws TemplateParseError unless |instructions| = turn_count >= 1, indices
/// run 1..N and the first turn is an initiation turn.
void validate_template(const ConversationTemplate& tmpl);

/// Parses the planner reply. Expects a ```template fenced block of
/// `key: value` lines:
///
///   turn_count: 3
///   turn: 1
///   type: Early Turn
///   intent: ...
///   eval: ...
///   turn: 2
///   ...
///   insights_used: I1-1, I1-2
///
/// Throws TemplateParseError on a missing block, unknown key, duplicate field
/// or invariant breach.
ConversationTemplate parse_template_reply(std::string_view reply, const std::string& instance_ref, int iteration);

/// The planner prompt. Every insight description appears verbatim as one
/// "- [<id>] ..." line under "Prior findings".
ChatRequest planner_request(const Instance& instance, const Persona& persona, const Scenario& scenario,
                            const RubricSet& rubrics, const std::vector<Insight>& insights, int iteration,
                            GenerationParams params);

/// Plans one template. A reply that fails to parse, cites unknown insight ids
/// or violates the turn bound gets one format-only corrective retry; after it
/// the failure surfaces as TemplateParseError or BoundViolation.
ConversationTemplate plan_template(const Instance& instance, const Persona& persona, const Scenario& scenario,
                                   const RubricSet& rubrics, const std::vector<Insight>& insights,
                                   ModelClient& planner, int iteration, GenerationParams params);

void write_templates(const std::filesystem::path& path, const std::vector<ConversationTemplate>& templates);
std::vector<ConversationTemplate> read_templates(const std::filesystem::path& path);

}  // namespace coreflect
