#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"
#include "coreflect/model.hpp"
#include "coreflect/planner.hpp"
#include "coreflect/simulator.hpp"

namespace coreflect {

struct TurnObservation {
  int model_turn_index = 1;
  std::string observation;
  bool operator==(const TurnObservation&) const = default;
};

struct ConversationSynthesis {
  std::vector<std::string> strengths;
  std::vector<std::string> weaknesses;
  bool operator==(const ConversationSynthesis&) const = default;
};

struct RubricRating {
  std::string rubric_name;
  int rating = 0;
  std::string rationale;
  bool operator==(const RubricRating&) const = default;
};

struct EvaluationRecord {
  std::string conversation_ref;
  std::string instance_ref;
  std::string model_ref;
  int iteration = 1;
  std::vector<TurnObservation> observations;
  ConversationSynthesis synthesis;
  std::vector<RubricRating> ratings;  // RubricSet order

  /// Mean of the K ratings.
  double conversation_rating() const;
  bool operator==(const EvaluationRecord&) const = default;
};

void to_json(json& j, const EvaluationRecord& v);
void from_json(const json& j, EvaluationRecord& v);

/// Step 1 reply: one `TURN <k>: <text>` line per model turn, k = 1..n.
std::vector<TurnObservation> parse_observations(std::string_view reply, int model_turns);
/// Step 2 reply: `STRENGTH: <text>` and `WEAKNESS: <text>` lines, at least one.
ConversationSynthesis parse_synthesis(std::string_view reply);
/// Step 3 reply: one `NAME | score | rationale` line per rubric. A line counts
/// when its first field (before `|` or `:`) is exactly a rubric name; other
/// lines are ignored. Throws JudgeParseError naming missing or duplicate
/// rubrics ("SSA missing", "ODI duplicate") and RatingRangeError for a score
/// that is not an integer in 1..5.
std::vector<RubricRating> parse_rating_block(std::string_view reply, const RubricSet& rubrics);

/// Runs observe, synthesize and rate as three sequential calls; each step's
/// prompt carries the earlier replies verbatim. Every step gets one corrective
/// retry before its error surfaces.
EvaluationRecord evaluate_conversation(const Conversation& conversation, const ConversationTemplate& tmpl,
                                       const Persona& persona, const Scenario& scenario, const RubricSet& rubrics,
                                       ModelClient& judge, GenerationParams params);

void write_evaluations(const std::filesystem::path& path, const std::vector<EvaluationRecord>& records);
std::vector<EvaluationRecord> read_evaluations(const std::filesystem::path& path);

}  // namespace coreflect
