#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coreflect/util.hpp"

namespace coreflect {

// ===========================================================================
// Enumerations
// ===========================================================================

enum class IntentCategory { kInstructional, kInformational, kOperational, kInteractive };
enum class TurnComplexity { kShort, kMedium, kLong };
enum class Dimension { kTaskCompleteness, kUserCentricPersonalization };
enum class Polarity { kDesirable, kUndesirable };

std::string_view to_string(IntentCategory c);
std::string_view to_string(TurnComplexity c);
std::string_view to_string(Dimension d);
std::string_view to_string(Polarity p);

std::optional<IntentCategory> parse_intent_category(std::string_view s);
std::optional<TurnComplexity> parse_turn_complexity(std::string_view s);
std::optional<Dimension> parse_dimension(std::string_view s);
std::optional<Polarity> parse_polarity(std::string_view s);

/// Inclusive bounds on user turns implied by a scenario's turn complexity.
/// Short is 1..3, Medium 4..6, Long 7 and above.
struct TurnBounds {
  int min;
  int max;  // inclusive; INT_MAX for Long
  bool contains(int n) const { return n >= min && n <= max; }
};
TurnBounds turn_bounds(TurnComplexity c);

// ===========================================================================
// Persona / Scenario / Instance
// ===========================================================================

/// Desired qualities of the assistant's replies (the personalization target).
struct PreferredStyle {
  std::string tone;
  std::string verbosity;
  std::string reasoning_depth;
  std::string engagement;
  std::string clarity;

  bool operator==(const PreferredStyle&) const = default;
};

struct Persona {
  std::string id;
  std::string role;
  std::string language;
  std::vector<std::string> traits;
  std::string tone;
  std::string verbosity;
  std::vector<std::string> quirks;
  PreferredStyle preferred_style;

  bool operator==(const Persona&) const = default;
};

struct Scenario {
  std::string id;
  std::string title;
  IntentCategory intent_category = IntentCategory::kInstructional;
  std::string situation;
  std::string core_task;
  TurnComplexity turn_complexity = TurnComplexity::kMedium;
  std::string flow_type;
  std::string success_criteria;

  bool operator==(const Scenario&) const = default;
};

struct Instance {
  std::string instance_id;
  std::string persona_ref;
  std::string scenario_ref;

  bool operator==(const Instance&) const = default;
};

// ===========================================================================
// Rubrics and insights
// ===========================================================================

struct Rubric {
  std::string name;
  std::string title;  // display name, optional
  Dimension dimension = Dimension::kTaskCompleteness;
  std::string description;
  std::map<int, std::string> anchors;  // keys exactly 1..5
  std::vector<std::string> evidence_cues;
  int version = 1;  // iteration at which this rubric's content last changed

  bool operator==(const Rubric&) const = default;
};

struct RubricSet {
  int iteration = 1;
  std::vector<Rubric> rubrics;

  std::vector<std::string> names() const;
  const Rubric* find(std::string_view name) const;
  std::size_t size() const { return rubrics.size(); }

  bool operator==(const RubricSet&) const = default;
};

struct Insight {
  std::string id;          // "I<t>-<l>"
  std::string family_ref;  // "F<t>-<l>"
  int iteration = 1;
  std::string description;
  Polarity polarity = Polarity::kUndesirable;
  std::string reward_or_penalty_criteria;

  bool operator==(const Insight&) const = default;
};

/// Checkpointed loop state for iteration t.
struct RunState {
  int iteration = 1;
  RubricSet rubric_set;
  std::vector<Insight> insight_set;  // insights of iteration t-1
  std::string dataset_ref;
  std::uint64_t random_seed = 0;
  std::vector<std::string> completed_stages;

  bool operator==(const RunState&) const = default;
};

// ===========================================================================
// Validation
// ===========================================================================

Persona validate_persona(const json& raw);
Scenario validate_scenario(const json& raw);
Rubric validate_rubric(const json& raw);
/// Accepts either an array of rubric records or {"iteration": t, "rubrics": [...]}.
/// When `expected_count` is set the set must contain exactly that many rubrics.
RubricSet validate_rubric_set(const json& raw,
                              std::optional<std::size_t> expected_count = std::nullopt);
Insight validate_insight(const json& raw);
RunState validate_run_state(const json& raw);

/// Collections enforce id uniqueness on top of per-record validation.
std::vector<Persona> validate_personas(const json& raw);
std::vector<Scenario> validate_scenarios(const json& raw);

std::vector<Persona> load_personas(const std::filesystem::path& path);
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);
RubricSet load_rubric_set(const std::filesystem::path& path,
                          std::optional<std::size_t> expected_count = std::nullopt);

/// The shipped initial rubric set: six rubrics over two dimensions with 1..5
/// anchors.
RubricSet default_rubric_set();

// nlohmann ADL hooks. from_json validates and throws SchemaError.
void to_json(json& j, const PreferredStyle& v);
void to_json(json& j, const Persona& v);
void to_json(json& j, const Scenario& v);
void to_json(json& j, const Instance& v);
void to_json(json& j, const Rubric& v);
void to_json(json& j, const RubricSet& v);
void to_json(json& j, const Insight& v);
void to_json(json& j, const RunState& v);
void from_json(const json& j, Persona& v);
void from_json(const json& j, Scenario& v);
void from_json(const json& j, Instance& v);
void from_json(const json& j, Rubric& v);
void from_json(const json& j, RubricSet& v);
void from_json(const json& j, Insight& v);
void from_json(const json& j, RunState& v);

// ===========================================================================
// Prompt rendering shared by several stages
// ===========================================================================

/// Expressive traits only (what the test model may see).
std::string render_persona_traits(const Persona& p);
/// Full persona including response preferences.
std::string render_persona_full(const Persona& p);
std::string render_scenario(const Scenario& s);
/// Rubric definitions with all five anchors.
std::string render_rubrics(const RubricSet& rubrics);

}  // namespace coreflect
