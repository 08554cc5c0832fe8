#include "coreflect/planner.hpp"

#include <climits>
#include <set>

#include "coreflect/protocol.hpp"

namespace coreflect {

void to_json(json& j, const TurnInstruction& v) {
  j = json{{"index", v.index},
           {"turn_type", v.turn_type},
           {"turn_intent", v.turn_intent},
           {"instruction_for_eval", v.instruction_for_eval}};
}

void to_json(json& j, const ConversationTemplate& v) {
  j = json{{"instance_ref", v.instance_ref},
           {"iteration", v.iteration},
           {"turn_count", v.turn_count},
           {"instructions", v.instructions},
           {"insights_used", v.insights_used}};
}

void from_json(const json& j, ConversationTemplate& v) {
  try {
    v.instance_ref = j.at("instance_ref").get<std::string>();
    v.iteration = j.at("iteration").get<int>();
    v.turn_count = j.at("turn_count").get<int>();
    v.instructions.clear();
    for (const auto& t : j.at("instructions")) {
      v.instructions.push_back({t.at("index").get<int>(), t.at("turn_type").get<std::string>(),
                                t.at("turn_intent").get<std::string>(),
                                t.at("instruction_for_eval").get<std::string>()});
    }
    v.insights_used = j.at("insights_used").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError("template", e.what());
  }
  validate_template(v);
}

void validate_template(const ConversationTemplate& tmpl) {
  if (tmpl.turn_count < 1) throw TemplateParseError("turn_count must be at least 1");
  if (static_cast<int>(tmpl.instructions.size()) != tmpl.turn_count) {
    throw TemplateParseError("turn_count is " + std::to_string(tmpl.turn_count) + " but " +
                             std::to_string(tmpl.instructions.size()) + " turns were given");
  }
  for (std::size_t i = 0; i < tmpl.instructions.size(); ++i) {
    const auto& ins = tmpl.instructions[i];
    if (ins.index != static_cast<int>(i) + 1) {
      throw TemplateParseError("turn indices must run 1.." + std::to_string(tmpl.turn_count));
    }
    if (trim(ins.turn_type).empty() || trim(ins.turn_intent).empty() || trim(ins.instruction_for_eval).empty()) {
      throw TemplateParseError("turn " + std::to_string(ins.index) + " has an empty type, intent or eval field");
    }
  }
  if (tmpl.instructions.front().turn_type != kInitiationTurnType) {
    throw TemplateParseError(std::string("turn 1 must be of type '") + kInitiationTurnType + "'");
  }
}

ConversationTemplate parse_template_reply(std::string_view reply, const std::string& instance_ref, int iteration) {
  const auto block = extract_fenced_block(reply, protocol::kTemplateFence);
  if (!block.found) throw TemplateParseError("no ```template block in planner reply");

  ConversationTemplate tmpl;
  tmpl.instance_ref = instance_ref;
  tmpl.iteration = iteration;
  bool have_count = false;
  bool have_insights = false;
  TurnInstruction* current = nullptr;
  std::set<std::string> seen_in_turn;

  for (const auto& raw_line : split_lines(block.body)) {
    const auto line = trim(raw_line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw TemplateParseError("line without 'key: value': " + line);
    const auto key = to_lower(trim(std::string_view(line).substr(0, colon)));
    const auto value = trim(std::string_view(line).substr(colon + 1));

    if (key == "turn_count") {
      if (have_count) throw TemplateParseError("duplicate turn_count");
      try {
        std::size_t used = 0;
        tmpl.turn_count = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw TemplateParseError("turn_count is not an integer: " + value);
      }
      have_count = true;
    } else if (key == "turn") {
      TurnInstruction ins;
      try {
        std::size_t used = 0;
        ins.index = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw TemplateParseError("turn index is not an integer: " + value);
      }
      tmpl.instructions.push_back(std::move(ins));
      current = &tmpl.instructions.back();
      seen_in_turn.clear();
    } else if (key == "type" || key == "intent" || key == "eval") {
      if (current == nullptr) throw TemplateParseError("'" + key + "' before the first 'turn:' line");
      if (!seen_in_turn.insert(key).second) {
        throw TemplateParseError("duplicate '" + key + "' in turn " + std::to_string(current->index));
      }
      if (key == "type") current->turn_type = value;
      if (key == "intent") current->turn_intent = value;
      if (key == "eval") current->instruction_for_eval = value;
    } else if (key == "insights_used") {
      if (have_insights) throw TemplateParseError("duplicate insights_used");
      have_insights = true;
      if (to_lower(value) != "none") {
        for (const auto& id : split(value, ',')) {
          const auto t = trim(id);
          if (!t.empty()) tmpl.insights_used.push_back(t);
        }
      }
    } else {
      throw TemplateParseError("unknown key '" + key + "'");
    }
  }
  if (!have_count) throw TemplateParseError("missing turn_count");
  validate_template(tmpl);
  return tmpl;
}

namespace {

std::string call_key(const Instance& instance, int iteration, int attempt) {
  return "plan/t" + std::to_string(iteration) + "/" + instance.instance_id + "/a" + std::to_string(attempt);
}

std::string bound_text(const TurnBounds& b) {
  return "min=" + std::to_string(b.min) + " max=" + (b.max == INT_MAX ? std::string("none") : std::to_string(b.max));
}

}  // namespace

ChatRequest planner_request(const Instance& instance, const Persona& persona, const Scenario& scenario,
                            const RubricSet& rubrics, const std::vector<Insight>& insights, int iteration,
                            GenerationParams params) {
  const auto bounds = turn_bounds(scenario.turn_complexity);
  std::string p;
  p += std::string(protocol::kPlanHeader) + "\n";
  p += "Instance: " + instance.instance_id + "\n";
  p += "Iteration: " + std::to_string(iteration) + "\n";
  p += std::string(protocol::kAllowedTurnsLabel) + " " + bound_text(bounds) + "\n\n";
  p += "Design a multi-turn conversation that a simulated user will follow with an AI assistant. "
       "Decide how many user turns are needed to complete the task, then give one instruction per user turn. "
       "Each turn needs a type (the first turn must be \"Early Turn\"; later turns may be Intermediate Turn, "
       "Challenging Turn, Normal Turn, Preference Recall Turn or another short label), the user's intent for the "
       "turn, and an evaluation note explaining what the turn tests about the assistant.\n\n";
  p += "## User\n" + render_persona_full(persona) + "\n";
  p += "## Scenario\n" + render_scenario(scenario) + "\n";
  p += "## Rubrics\n" + render_rubrics(rubrics) + "\n";
  p += "## Prior findings\n";
  if (insights.empty()) {
    p += "(none)\n";
  } else {
    for (const auto& ins : insights) {
      p += "- [" + ins.id + "] " + ins.description + "\n";
    }
    p += "Design turns that probe these findings and list the ids you used.\n";
  }
  p += "\n## Output format\nReply with exactly one fenced block:\n"
       "```template\n"
       "turn_count: <N>\n"
       "turn: 1\n"
       "type: Early Turn\n"
       "intent: <what the user wants in this turn>\n"
       "eval: <what this turn tests>\n"
       "turn: 2\n"
       "...\n"
       "insights_used: <comma-separated finding ids, or none>\n"
       "```\n";
  return make_request(RoleTag::kPlanner, "You are a conversation planner for assistant evaluation.", std::move(p),
                      params, call_key(instance, iteration, 1));
}

ConversationTemplate plan_template(const Instance& instance, const Persona& persona, const Scenario& scenario,
                                   const RubricSet& rubrics, const std::vector<Insight>& insights,
                                   ModelClient& planner, int iteration, GenerationParams params) {
  const auto bounds = turn_bounds(scenario.turn_complexity);
  std::set<std::string> known_ids;
  for (const auto& ins : insights) known_ids.insert(ins.id);

  // Returns the problem with a reply, or an empty string when it is usable.
  // Bound violations are reported separately so the final error type matches.
  auto check = [&](const std::string& reply, ConversationTemplate& out, bool& bound_violation) -> std::string {
    bound_violation = false;
    try {
      out = parse_template_reply(reply, instance.instance_id, iteration);
    } catch (const TemplateParseError& e) {
      return e.what();
    }
    for (const auto& id : out.insights_used) {
      if (known_ids.count(id) == 0) return "insights_used cites unknown id '" + id + "'";
    }
    if (!bounds.contains(out.turn_count)) {
      bound_violation = true;
      return "turn_count " + std::to_string(out.turn_count) + " is outside " + bound_text(bounds) + " for " +
             std::string(to_string(scenario.turn_complexity)) + " complexity";
    }
    return {};
  };

  auto request = planner_request(instance, persona, scenario, rubrics, insights, iteration, params);
  auto reply = planner.chat(request);
  ConversationTemplate tmpl;
  bool bound_violation = false;
  auto problem = check(reply, tmpl, bound_violation);
  if (problem.empty()) return tmpl;

  request.messages.push_back({Speaker::kAssistant, reply});
  request.messages.push_back(
      {Speaker::kUser, std::string(protocol::kCorrectionHeader) + ": " + problem +
                           ". Reply again with only the ```template block in the required format. " +
                           protocol::kAllowedTurnsLabel + " " + bound_text(bounds) + "."});
  request.call_key = call_key(instance, iteration, 2);
  reply = planner.chat(request);
  problem = check(reply, tmpl, bound_violation);
  if (problem.empty()) return tmpl;
  if (bound_violation) throw BoundViolation(instance.instance_id + ": " + problem);
  throw TemplateParseError(instance.instance_id + ": " + problem);
}

void write_templates(const std::filesystem::path& path, const std::vector<ConversationTemplate>& templates) {
  std::vector<json> rows(templates.begin(), templates.end());
  write_jsonl(path, rows);
}

std::vector<ConversationTemplate> read_templates(const std::filesystem::path& path) {
  std::vector<ConversationTemplate> out;
  for (const auto& row : read_jsonl(path)) out.push_back(row.get<ConversationTemplate>());
  return out;
}

}  // namespace coreflect
