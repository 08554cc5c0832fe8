#include "coreflect/model.hpp"

#include <climits>
#include <set>

#include "coreflect/error.hpp"
#include "default_rubrics_data.hpp"

namespace coreflect {

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

std::string_view to_string(IntentCategory c) {
  switch (c) {
    case IntentCategory::kInstructional: return "Instructional";
    case IntentCategory::kInformational: return "Informational";
    case IntentCategory::kOperational: return "Operational";
    case IntentCategory::kInteractive: return "Interactive";
  }
  return "";
}

std::string_view to_string(TurnComplexity c) {
  switch (c) {
    case TurnComplexity::kShort: return "Short";
    case TurnComplexity::kMedium: return "Medium";
    case TurnComplexity::kLong: return "Long";
  }
  return "";
}

std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::kTaskCompleteness: return "TaskCompleteness";
    case Dimension::kUserCentricPersonalization: return "UserCentricPersonalization";
  }
  return "";
}

std::string_view to_string(Polarity p) {
  return p == Polarity::kDesirable ? "desirable" : "undesirable";
}

std::optional<IntentCategory> parse_intent_category(std::string_view s) {
  for (auto c : {IntentCategory::kInstructional, IntentCategory::kInformational,
                 IntentCategory::kOperational, IntentCategory::kInteractive}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::optional<TurnComplexity> parse_turn_complexity(std::string_view s) {
  for (auto c : {TurnComplexity::kShort, TurnComplexity::kMedium, TurnComplexity::kLong}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::optional<Dimension> parse_dimension(std::string_view s) {
  for (auto d : {Dimension::kTaskCompleteness, Dimension::kUserCentricPersonalization}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

std::optional<Polarity> parse_polarity(std::string_view s) {
  if (s == "desirable") return Polarity::kDesirable;
  if (s == "undesirable") return Polarity::kUndesirable;
  return std::nullopt;
}

TurnBounds turn_bounds(TurnComplexity c) {
  switch (c) {
    case TurnComplexity::kShort: return {1, 3};
    case TurnComplexity::kMedium: return {4, 6};
    case TurnComplexity::kLong: return {7, INT_MAX};
  }
  return {1, INT_MAX};
}

// ---------------------------------------------------------------------------
// Field readers
// ---------------------------------------------------------------------------

namespace {

std::string path_of(std::string_view prefix, std::string_view key) {
  return prefix.empty() ? std::string(key) : std::string(prefix) + "." + std::string(key);
}

const json& require(const json& obj, std::string_view prefix, const char* key) {
  if (!obj.is_object()) throw SchemaError(std::string(prefix.empty() ? "<root>" : prefix), "expected object");
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw SchemaError(path_of(prefix, key), "missing");
  return *it;
}

std::string read_string(const json& obj, std::string_view prefix, const char* key,
                        bool nonempty = false) {
  const auto& v = require(obj, prefix, key);
  if (!v.is_string()) throw SchemaError(path_of(prefix, key), "expected string");
  auto s = v.get<std::string>();
  if (nonempty && trim(s).empty()) throw SchemaError(path_of(prefix, key), "must be nonempty");
  return s;
}

std::vector<std::string> read_string_list(const json& obj, std::string_view prefix,
                                          const char* key, bool nonempty) {
  const auto& v = require(obj, prefix, key);
  if (!v.is_array()) throw SchemaError(path_of(prefix, key), "expected array");
  if (nonempty && v.empty()) throw SchemaError(path_of(prefix, key), "must be nonempty");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw SchemaError(path_of(prefix, key), "expected array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

int read_int(const json& obj, std::string_view prefix, const char* key) {
  const auto& v = require(obj, prefix, key);
  if (!v.is_number_integer()) throw SchemaError(path_of(prefix, key), "expected integer");
  return v.get<int>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

Persona validate_persona(const json& raw) {
  Persona p;
  p.id = read_string(raw, "", "id", true);
  p.role = read_string(raw, "", "role");
  p.language = read_string(raw, "", "language");
  p.traits = read_string_list(raw, "", "traits", true);
  p.tone = read_string(raw, "", "tone");
  p.verbosity = read_string(raw, "", "verbosity");
  p.quirks = read_string_list(raw, "", "quirks", true);
  const auto& style = require(raw, "", "preferred_style");
  p.preferred_style.tone = read_string(style, "preferred_style", "tone");
  p.preferred_style.verbosity = read_string(style, "preferred_style", "verbosity");
  p.preferred_style.reasoning_depth = read_string(style, "preferred_style", "reasoning_depth");
  p.preferred_style.engagement = read_string(style, "preferred_style", "engagement");
  p.preferred_style.clarity = read_string(style, "preferred_style", "clarity");
  return p;
}

Scenario validate_scenario(const json& raw) {
  Scenario s;
  s.id = read_string(raw, "", "id", true);
  s.title = read_string(raw, "", "title");
  const auto category = read_string(raw, "", "intent_category");
  auto parsed_category = parse_intent_category(category);
  if (!parsed_category) {
    throw SchemaError("intent_category", "unknown category '" + category + "'");
  }
  s.intent_category = *parsed_category;
  s.situation = read_string(raw, "", "situation");
  s.core_task = read_string(raw, "", "core_task", true);
  const auto complexity = read_string(raw, "", "turn_complexity");
  auto parsed_complexity = parse_turn_complexity(complexity);
  if (!parsed_complexity) {
    throw SchemaError("turn_complexity", "unknown complexity '" + complexity + "'");
  }
  s.turn_complexity = *parsed_complexity;
  s.flow_type = read_string(raw, "", "flow_type");
  s.success_criteria = read_string(raw, "", "success_criteria");
  return s;
}

Rubric validate_rubric(const json& raw) {
  Rubric r;
  r.name = read_string(raw, "", "name", true);
  const std::string prefix = r.name;
  if (raw.contains("title") && raw["title"].is_string()) r.title = raw["title"].get<std::string>();
  const auto dim = read_string(raw, prefix, "dimension");
  auto parsed_dim = parse_dimension(dim);
  if (!parsed_dim) throw SchemaError(path_of(prefix, "dimension"), "unknown dimension '" + dim + "'");
  r.dimension = *parsed_dim;
  r.description = read_string(raw, prefix, "description");

  const auto& anchors = require(raw, prefix, "anchors");
  if (!anchors.is_object()) throw SchemaError(path_of(prefix, "anchors"), "expected object");
  for (int level = 1; level <= 5; ++level) {
    const auto key = std::to_string(level);
    r.anchors[level] = read_string(anchors, path_of(prefix, "anchors"), key.c_str(), true);
  }
  for (const auto& [key, _] : anchors.items()) {
    if (key.size() != 1 || key[0] < '1' || key[0] > '5') {
      throw SchemaError(path_of(prefix, "anchors." + key), "unexpected anchor level");
    }
  }

  if (raw.contains("evidence_cues")) {
    r.evidence_cues = read_string_list(raw, prefix, "evidence_cues", false);
  }
  if (raw.contains("version")) {
    r.version = read_int(raw, prefix, "version");
    if (r.version < 1) throw SchemaError(path_of(prefix, "version"), "must be >= 1");
  }
  return r;
}

RubricSet validate_rubric_set(const json& raw, std::optional<std::size_t> expected_count) {
  RubricSet set;
  const json* list = &raw;
  if (raw.is_object()) {
    set.iteration = raw.contains("iteration") ? read_int(raw, "", "iteration") : 1;
    if (set.iteration < 1) throw SchemaError("iteration", "must be >= 1");
    list = &require(raw, "", "rubrics");
  }
  if (!list->is_array()) throw SchemaError("rubrics", "expected array");
  if (list->empty()) throw SchemaError("rubrics", "must be nonempty");

  std::set<std::string> seen;
  for (const auto& item : *list) {
    auto rubric = validate_rubric(item);
    if (!seen.insert(rubric.name).second) {
      throw SchemaError(rubric.name, "duplicate rubric name");
    }
    if (rubric.version > set.iteration) {
      throw SchemaError(path_of(rubric.name, "version"), "exceeds rubric set iteration");
    }
    set.rubrics.push_back(std::move(rubric));
  }
  if (expected_count && set.rubrics.size() != *expected_count) {
    throw SchemaError("rubrics", "expected " + std::to_string(*expected_count) + " rubrics, got " +
                                     std::to_string(set.rubrics.size()));
  }
  return set;
}

Insight validate_insight(const json& raw) {
  Insight i;
  i.id = read_string(raw, "", "id", true);
  i.family_ref = read_string(raw, "", "family_ref", true);
  i.iteration = read_int(raw, "", "iteration");
  i.description = read_string(raw, "", "description", true);
  const auto polarity = read_string(raw, "", "polarity");
  auto parsed = parse_polarity(polarity);
  if (!parsed) throw SchemaError("polarity", "unknown polarity '" + polarity + "'");
  i.polarity = *parsed;
  i.reward_or_penalty_criteria = read_string(raw, "", "reward_or_penalty_criteria", true);
  return i;
}

RunState validate_run_state(const json& raw) {
  RunState s;
  s.iteration = read_int(raw, "", "iteration");
  if (s.iteration < 1) throw SchemaError("iteration", "must be >= 1");
  s.rubric_set = validate_rubric_set(require(raw, "", "rubric_set"));
  for (const auto& item : require(raw, "", "insight_set")) s.insight_set.push_back(validate_insight(item));
  if (s.iteration == 1 && !s.insight_set.empty()) {
    throw SchemaError("insight_set", "must be empty at iteration 1");
  }
  s.dataset_ref = read_string(raw, "", "dataset_ref");
  const auto& seed = require(raw, "", "random_seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) {
    throw SchemaError("random_seed", "expected integer");
  }
  s.random_seed = seed.get<std::uint64_t>();
  if (raw.contains("completed_stages")) {
    s.completed_stages = read_string_list(raw, "", "completed_stages", false);
  }
  return s;
}

std::vector<Persona> validate_personas(const json& raw) {
  if (!raw.is_array()) throw SchemaError("<root>", "expected array of personas");
  std::vector<Persona> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      out.push_back(validate_persona(raw[i]));
    } catch (const SchemaError& e) {
      throw SchemaError(e.field(), std::string(e.what()) + " (persona #" + std::to_string(i) + ")");
    }
    if (!ids.insert(out.back().id).second) throw SchemaError("id", "duplicate persona id " + out.back().id);
  }
  return out;
}

std::vector<Scenario> validate_scenarios(const json& raw) {
  if (!raw.is_array()) throw SchemaError("<root>", "expected array of scenarios");
  std::vector<Scenario> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      out.push_back(validate_scenario(raw[i]));
    } catch (const SchemaError& e) {
      throw SchemaError(e.field(), std::string(e.what()) + " (scenario #" + std::to_string(i) + ")");
    }
    if (!ids.insert(out.back().id).second) throw SchemaError("id", "duplicate scenario id " + out.back().id);
  }
  return out;
}

std::vector<Persona> load_personas(const std::filesystem::path& path) {
  return validate_personas(read_json(path));
}

std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  return validate_scenarios(read_json(path));
}

RubricSet load_rubric_set(const std::filesystem::path& path, std::optional<std::size_t> expected_count) {
  return validate_rubric_set(read_json(path), expected_count);
}

RubricSet default_rubric_set() {
  static const RubricSet kDefault = validate_rubric_set(json::parse(kDefaultRubricsJson), 6);
  return kDefault;
}

// ---------------------------------------------------------------------------
// RubricSet helpers
// ---------------------------------------------------------------------------

std::vector<std::string> RubricSet::names() const {
  std::vector<std::string> out;
  out.reserve(rubrics.size());
  for (const auto& r : rubrics) out.push_back(r.name);
  return out;
}

const Rubric* RubricSet::find(std::string_view name) const {
  for (const auto& r : rubrics) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(json& j, const PreferredStyle& v) {
  j = json{{"tone", v.tone},
           {"verbosity", v.verbosity},
           {"reasoning_depth", v.reasoning_depth},
           {"engagement", v.engagement},
           {"clarity", v.clarity}};
}

void to_json(json& j, const Persona& v) {
  j = json{{"id", v.id},         {"role", v.role},       {"language", v.language},
           {"traits", v.traits}, {"tone", v.tone},       {"verbosity", v.verbosity},
           {"quirks", v.quirks}, {"preferred_style", v.preferred_style}};
}

void to_json(json& j, const Scenario& v) {
  j = json{{"id", v.id},
           {"title", v.title},
           {"intent_category", to_string(v.intent_category)},
           {"situation", v.situation},
           {"core_task", v.core_task},
           {"turn_complexity", to_string(v.turn_complexity)},
           {"flow_type", v.flow_type},
           {"success_criteria", v.success_criteria}};
}

void to_json(json& j, const Instance& v) {
  j = json{{"instance_id", v.instance_id}, {"persona_ref", v.persona_ref}, {"scenario_ref", v.scenario_ref}};
}

void to_json(json& j, const Rubric& v) {
  json anchors = json::object();
  for (const auto& [level, text] : v.anchors) anchors[std::to_string(level)] = text;
  j = json{{"name", v.name},
           {"dimension", to_string(v.dimension)},
           {"description", v.description},
           {"anchors", anchors},
           {"evidence_cues", v.evidence_cues},
           {"version", v.version}};
  if (!v.title.empty()) j["title"] = v.title;
}

void to_json(json& j, const RubricSet& v) { j = json{{"iteration", v.iteration}, {"rubrics", v.rubrics}}; }

void to_json(json& j, const Insight& v) {
  j = json{{"id", v.id},
           {"family_ref", v.family_ref},
           {"iteration", v.iteration},
           {"description", v.description},
           {"polarity", to_string(v.polarity)},
           {"reward_or_penalty_criteria", v.reward_or_penalty_criteria}};
}

void to_json(json& j, const RunState& v) {
  j = json{{"iteration", v.iteration},     {"rubric_set", v.rubric_set},
           {"insight_set", v.insight_set}, {"dataset_ref", v.dataset_ref},
           {"random_seed", v.random_seed}, {"completed_stages", v.completed_stages}};
}

void from_json(const json& j, Persona& v) { v = validate_persona(j); }
void from_json(const json& j, Scenario& v) { v = validate_scenario(j); }
void from_json(const json& j, Instance& v) {
  v.instance_id = read_string(j, "", "instance_id", true);
  v.persona_ref = read_string(j, "", "persona_ref", true);
  v.scenario_ref = read_string(j, "", "scenario_ref", true);
}
void from_json(const json& j, Rubric& v) { v = validate_rubric(j); }
void from_json(const json& j, RubricSet& v) { v = validate_rubric_set(j); }
void from_json(const json& j, Insight& v) { v = validate_insight(j); }
void from_json(const json& j, RunState& v) { v = validate_run_state(j); }

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

std::string render_persona_traits(const Persona& p) {
  std::string out;
  out += "Role: " + p.role + "\n";
  out += "Language: " + p.language + "\n";
  out += "Traits: " + join(p.traits, ", ") + "\n";
  out += "Tone: " + p.tone + "\n";
  out += "Verbosity: " + p.verbosity + "\n";
  out += "Quirks: " + join(p.quirks, "; ") + "\n";
  return out;
}

std::string render_persona_full(const Persona& p) {
  std::string out = "Persona " + p.id + "\n" + render_persona_traits(p);
  out += "Preferred response style:\n";
  out += "  Tone: " + p.preferred_style.tone + "\n";
  out += "  Verbosity: " + p.preferred_style.verbosity + "\n";
  out += "  Reasoning depth: " + p.preferred_style.reasoning_depth + "\n";
  out += "  Engagement: " + p.preferred_style.engagement + "\n";
  out += "  Clarity: " + p.preferred_style.clarity + "\n";
  return out;
}

std::string render_scenario(const Scenario& s) {
  std::string out = "Scenario " + s.id + ": " + s.title + "\n";
  out += "Category: " + std::string(to_string(s.intent_category)) + "\n";
  out += "Situation: " + s.situation + "\n";
  out += "Core task: " + s.core_task + "\n";
  out += "Turn complexity: " + std::string(to_string(s.turn_complexity)) + "\n";
  out += "Flow type: " + s.flow_type + "\n";
  out += "Success criteria: " + s.success_criteria + "\n";
  return out;
}

std::string render_rubrics(const RubricSet& rubrics) {
  std::string out;
  for (const auto& r : rubrics.rubrics) {
    out += "### " + r.name;
    if (!r.title.empty()) out += " (" + r.title + ")";
    out += " [" + std::string(to_string(r.dimension)) + "]\n";
    out += r.description + "\n";
    for (const auto& [level, text] : r.anchors) {
      out += "  " + std::to_string(level) + ": " + text + "\n";
    }
    if (!r.evidence_cues.empty()) out += "  Evidence cues: " + join(r.evidence_cues, "; ") + "\n";
  }
  return out;
}

}  // namespace coreflect
