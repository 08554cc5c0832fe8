#include "coreflect/judge.hpp"

#include <map>
#include <numeric>
#include <optional>

#include "coreflect/protocol.hpp"

namespace coreflect {

double EvaluationRecord::conversation_rating() const {
  if (ratings.empty()) throw EmptyTensor("evaluation " + conversation_ref + " has no ratings");
  double sum = 0.0;
  for (const auto& r : ratings) sum += r.rating;
  return sum / static_cast<double>(ratings.size());
}

void to_json(json& j, const EvaluationRecord& v) {
  json obs = json::array();
  for (const auto& o : v.observations) obs.push_back({{"model_turn_index", o.model_turn_index}, {"observation", o.observation}});
  json ratings = json::array();
  for (const auto& r : v.ratings) ratings.push_back({{"rubric_name", r.rubric_name}, {"rating", r.rating}, {"rationale", r.rationale}});
  j = json{{"conversation_ref", v.conversation_ref},
           {"instance_ref", v.instance_ref},
           {"model_ref", v.model_ref},
           {"iteration", v.iteration},
           {"observations", obs},
           {"synthesis", {{"strengths", v.synthesis.strengths}, {"weaknesses", v.synthesis.weaknesses}}},
           {"ratings", ratings}};
}

void from_json(const json& j, EvaluationRecord& v) {
  try {
    v.conversation_ref = j.at("conversation_ref").get<std::string>();
    v.instance_ref = j.at("instance_ref").get<std::string>();
    v.model_ref = j.at("model_ref").get<std::string>();
    v.iteration = j.at("iteration").get<int>();
    v.observations.clear();
    for (const auto& o : j.at("observations")) {
      v.observations.push_back({o.at("model_turn_index").get<int>(), o.at("observation").get<std::string>()});
    }
    v.synthesis.strengths = j.at("synthesis").at("strengths").get<std::vector<std::string>>();
    v.synthesis.weaknesses = j.at("synthesis").at("weaknesses").get<std::vector<std::string>>();
    v.ratings.clear();
    for (const auto& r : j.at("ratings")) {
      v.ratings.push_back({r.at("rubric_name").get<std::string>(), r.at("rating").get<int>(),
                           r.at("rationale").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError("evaluation", e.what());
  }
  for (const auto& r : v.ratings) {
    if (r.rating < 1 || r.rating > 5) throw SchemaError("ratings.rating", "must be in 1..5");
  }
}

namespace {

std::string strip_bullet(std::string line) {
  line = trim(line);
  if (line.rfind("- ", 0) == 0 || line.rfind("* ", 0) == 0) line = trim(std::string_view(line).substr(2));
  return line;
}

}  // namespace

std::vector<TurnObservation> parse_observations(std::string_view reply, int model_turns) {
  std::map<int, std::string> by_index;
  for (const auto& raw : split_lines(reply)) {
    const auto line = strip_bullet(raw);
    if (!starts_with_ci(line, "TURN")) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const auto num = trim(std::string_view(line).substr(4, colon - 4));
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) continue;
    const int k = std::stoi(num);
    auto text = trim(std::string_view(line).substr(colon + 1));
    if (k < 1 || k > model_turns) throw JudgeParseError("observation for turn " + num + " is out of range");
    if (text.empty()) throw JudgeParseError("observation for turn " + num + " is empty");
    if (!by_index.emplace(k, std::move(text)).second) throw JudgeParseError("turn " + num + " duplicate");
  }
  std::vector<std::string> missing;
  for (int k = 1; k <= model_turns; ++k) {
    if (by_index.count(k) == 0) missing.push_back("turn " + std::to_string(k) + " missing");
  }
  if (!missing.empty()) throw JudgeParseError(join(missing, "; "));
  std::vector<TurnObservation> out;
  for (auto& [k, text] : by_index) out.push_back({k, std::move(text)});
  return out;
}

ConversationSynthesis parse_synthesis(std::string_view reply) {
  ConversationSynthesis s;
  for (const auto& raw : split_lines(reply)) {
    const auto line = strip_bullet(raw);
    for (auto [prefix, target] : {std::pair{"STRENGTH:", &s.strengths}, std::pair{"WEAKNESS:", &s.weaknesses}}) {
      if (starts_with_ci(line, prefix)) {
        auto text = trim(std::string_view(line).substr(std::string_view(prefix).size()));
        if (!text.empty()) target->push_back(std::move(text));
      }
    }
  }
  if (s.strengths.empty() && s.weaknesses.empty()) {
    throw JudgeParseError("no STRENGTH: or WEAKNESS: lines in synthesis");
  }
  return s;
}

std::vector<RubricRating> parse_rating_block(std::string_view reply, const RubricSet& rubrics) {
  struct Raw {
    std::string score;
    std::string rationale;
  };
  std::map<std::string, std::vector<Raw>> found;
  for (const auto& raw : split_lines(reply)) {
    const auto line = strip_bullet(raw);
    const auto sep = line.find_first_of("|:");
    if (sep == std::string::npos) continue;
    const auto name = trim(std::string_view(line).substr(0, sep));
    if (rubrics.find(name) == nullptr) continue;
    const auto rest = std::string_view(line).substr(sep + 1);
    const auto bar = rest.find('|');
    Raw r;
    r.score = trim(rest.substr(0, bar));
    if (bar != std::string_view::npos) r.rationale = trim(rest.substr(bar + 1));
    found[name].push_back(std::move(r));
  }

  std::vector<std::string> problems;
  for (const auto& rubric : rubrics.rubrics) {
    const auto it = found.find(rubric.name);
    if (it == found.end()) {
      problems.push_back(rubric.name + " missing");
    } else if (it->second.size() > 1) {
      problems.push_back(rubric.name + " duplicate");
    }
  }
  if (!problems.empty()) throw JudgeParseError(join(problems, "; "));

  std::vector<RubricRating> out;
  for (const auto& rubric : rubrics.rubrics) {
    const auto& r = found.at(rubric.name).front();
    if (r.score.empty() || r.score.find_first_not_of("0123456789") != std::string::npos || r.score.size() > 1 ||
        r.score[0] < '1' || r.score[0] > '5') {
      throw RatingRangeError(rubric.name + " score '" + r.score + "' is not an integer in 1..5");
    }
    if (r.rationale.empty()) throw JudgeParseError(rubric.name + " rationale missing");
    out.push_back({rubric.name, r.score[0] - '0', r.rationale});
  }
  return out;
}

namespace {

std::string judge_system_context(const Conversation& conv, const ConversationTemplate& tmpl, const Persona& persona,
                                 const Scenario& scenario) {
  std::string s =
      "You are an expert evaluator of multi-turn conversations between a user and an AI assistant. Judge the "
      "assistant against the user's profile, the scenario and the rubrics you are given.\n\n";
  s += "## User\n" + render_persona_full(persona) + "\n";
  s += "## Scenario\n" + render_scenario(scenario) + "\n";
  s += "## Conversation plan\n";
  for (const auto& ins : tmpl.instructions) {
    s += "Turn " + std::to_string(ins.index) + " (" + ins.turn_type + "): " + ins.turn_intent +
         "\n  Evaluation note: " + ins.instruction_for_eval + "\n";
  }
  s += "\n## Transcript\n";
  for (const auto& t : conv.turns) {
    const int k = (t.index + 1) / 2;
    s += (t.speaker == TurnSpeaker::kUser ? "USER [" : "ASSISTANT [") + std::to_string(k) + "]: " + t.text + "\n";
  }
  return s;
}

// Runs one protocol step with a single corrective retry. `parse` throws a
// protocol error on a bad reply.
template <typename Parse>
auto run_step(ModelClient& judge, ChatRequest request, const std::string& key_prefix, Parse&& parse)
    -> std::pair<decltype(parse(std::string{})), std::string> {
  request.call_key = key_prefix + "/a1";
  auto reply = judge.chat(request);
  try {
    return {parse(reply), reply};
  } catch (const Error& e) {
    if (e.exit_code() != ExitCode::kProtocol) throw;
    request.messages.push_back({Speaker::kAssistant, reply});
    request.messages.push_back({Speaker::kUser, std::string(protocol::kCorrectionHeader) + ": " + e.what() +
                                                    ". Reply again, following the required format exactly."});
    request.call_key = key_prefix + "/a2";
    reply = judge.chat(request);
    return {parse(reply), reply};
  }
}

}  // namespace

EvaluationRecord evaluate_conversation(const Conversation& conversation, const ConversationTemplate& tmpl,
                                       const Persona& persona, const Scenario& scenario, const RubricSet& rubrics,
                                       ModelClient& judge, GenerationParams params) {
  validate_conversation(conversation);
  if (rubrics.iteration != conversation.iteration) {
    throw ConfigError("rubric set iteration " + std::to_string(rubrics.iteration) + " does not match conversation " +
                      conversation.conversation_id + " at iteration " + std::to_string(conversation.iteration));
  }
  const auto system = judge_system_context(conversation, tmpl, persona, scenario);
  const int model_turns = conversation.user_turn_count;
  const std::string key = "judge/t" + std::to_string(conversation.iteration) + "/" + conversation.model_ref + "/" +
                          conversation.instance_ref;

  std::string p1 = std::string(protocol::kJudgeObserveHeader) + "\n";
  p1 += std::string(protocol::kModelTurnsLabel) + " " + std::to_string(model_turns) + "\n\n";
  p1 += "Analyze each assistant turn of the transcript in turn. For every assistant turn write one concise "
        "observation on one line, formatted as `TURN <k>: <observation>`, for k = 1.." +
        std::to_string(model_turns) + ".";
  auto [observations, reply1] = run_step(judge, make_request(RoleTag::kJudge, system, p1, params, ""), key + "/s1",
                                         [&](const std::string& r) { return parse_observations(r, model_turns); });

  std::string p2 = std::string(protocol::kJudgeSynthesizeHeader) + "\n\n";
  p2 += "Turn observations:\n" + reply1 + "\n\n";
  p2 += "Synthesize the observations into conversation-wide strengths and weaknesses. Write one per line as "
        "`STRENGTH: <text>` or `WEAKNESS: <text>`.";
  auto [synthesis, reply2] = run_step(judge, make_request(RoleTag::kJudge, system, p2, params, ""), key + "/s2",
                                      [](const std::string& r) { return parse_synthesis(r); });

  std::string p3 = std::string(protocol::kJudgeRateHeader) + "\n\n";
  p3 += "## Rubrics\n" + render_rubrics(rubrics) + "\n";
  p3 += "Turn observations:\n" + reply1 + "\n\n";
  p3 += "Conversation synthesis:\n" + reply2 + "\n\n";
  p3 += std::string(protocol::kRubricsToRateLabel) + " " + join(rubrics.names(), ", ") + "\n";
  p3 += "Rate the assistant on every rubric with an integer from 1 to 5 using the anchors. Write one line per "
        "rubric formatted as `NAME | score | rationale`.";
  auto [ratings, reply3] = run_step(judge, make_request(RoleTag::kJudge, system, p3, params, ""), key + "/s3",
                                    [&](const std::string& r) { return parse_rating_block(r, rubrics); });
  (void)reply3;

  EvaluationRecord rec;
  rec.conversation_ref = conversation.conversation_id;
  rec.instance_ref = conversation.instance_ref;
  rec.model_ref = conversation.model_ref;
  rec.iteration = conversation.iteration;
  rec.observations = std::move(observations);
  rec.synthesis = std::move(synthesis);
  rec.ratings = std::move(ratings);
  return rec;
}

void write_evaluations(const std::filesystem::path& path, const std::vector<EvaluationRecord>& records) {
  std::vector<json> rows(records.begin(), records.end());
  write_jsonl(path, rows);
}

std::vector<EvaluationRecord> read_evaluations(const std::filesystem::path& path) {
  std::vector<EvaluationRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(row.get<EvaluationRecord>());
  return out;
}

}  // namespace coreflect
