#include "coreflect/simulator.hpp"

#include <cstdio>

#include <spdlog/spdlog.h>

#include "coreflect/protocol.hpp"

namespace coreflect {

std::vector<std::string> Conversation::model_texts() const {
  std::vector<std::string> out;
  for (const auto& t : turns) {
    if (t.speaker == TurnSpeaker::kModel) out.push_back(t.text);
  }
  return out;
}

void to_json(json& j, const Turn& v) {
  j = json{{"index", v.index}, {"speaker", v.speaker == TurnSpeaker::kUser ? "user" : "model"}, {"text", v.text}};
}

void to_json(json& j, const Conversation& v) {
  j = json{{"conversation_id", v.conversation_id}, {"instance_ref", v.instance_ref}, {"model_ref", v.model_ref},
           {"iteration", v.iteration},             {"template_ref", v.template_ref}, {"turns", v.turns},
           {"user_turn_count", v.user_turn_count}};
}

namespace {

std::vector<Turn> turns_from_json(const json& j) {
  std::vector<Turn> out;
  for (const auto& t : j) {
    const auto speaker = t.at("speaker").get<std::string>();
    if (speaker != "user" && speaker != "model") throw SchemaError("turns.speaker", "must be user or model");
    out.push_back({t.at("index").get<int>(), speaker == "user" ? TurnSpeaker::kUser : TurnSpeaker::kModel,
                   t.at("text").get<std::string>()});
  }
  return out;
}

// Turns must alternate from the user with indices 1..n.
void check_prefix(const std::vector<Turn>& turns) {
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto expected = i % 2 == 0 ? TurnSpeaker::kUser : TurnSpeaker::kModel;
    if (turns[i].speaker != expected) throw SchemaError("turns", "speakers must alternate starting with the user");
    if (turns[i].index != static_cast<int>(i) + 1) throw SchemaError("turns", "indices must be contiguous from 1");
    if (trim(turns[i].text).empty()) throw SchemaError("turns", "turn text must be nonempty");
  }
}

std::string pad3(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", k);
  return buf;
}

std::string render_history(const std::vector<Turn>& history) {
  if (history.empty()) return "(no messages yet)\n";
  std::string out;
  for (const auto& t : history) {
    out += (t.speaker == TurnSpeaker::kUser ? "USER: " : "ASSISTANT: ") + t.text + "\n";
  }
  return out;
}

}  // namespace

void from_json(const json& j, Conversation& v) {
  try {
    v.conversation_id = j.at("conversation_id").get<std::string>();
    v.instance_ref = j.at("instance_ref").get<std::string>();
    v.model_ref = j.at("model_ref").get<std::string>();
    v.iteration = j.at("iteration").get<int>();
    v.template_ref = j.at("template_ref").get<std::string>();
    v.turns = turns_from_json(j.at("turns"));
    v.user_turn_count = j.at("user_turn_count").get<int>();
  } catch (const json::exception& e) {
    throw SchemaError("conversation", e.what());
  }
  validate_conversation(v);
}

void validate_conversation(const Conversation& c) {
  if (c.user_turn_count < 1) throw SchemaError("user_turn_count", "must be at least 1");
  if (c.turns.size() != 2 * static_cast<std::size_t>(c.user_turn_count)) {
    throw SchemaError("turns", "expected " + std::to_string(2 * c.user_turn_count) + " turns, got " +
                                   std::to_string(c.turns.size()));
  }
  check_prefix(c.turns);
}

std::string conversation_id_for(std::string_view instance_id, std::string_view model_id) {
  return std::string(instance_id) + "/" + std::string(model_id);
}

std::string template_ref_for(const ConversationTemplate& tmpl) {
  return tmpl.instance_ref + "@t" + std::to_string(tmpl.iteration);
}

ChatRequest simulator_request(const Persona& persona, const Scenario& scenario, const ConversationTemplate& tmpl,
                              int k, const std::vector<Turn>& history, const std::string& model_id,
                              GenerationParams params) {
  const auto& ins = tmpl.instructions.at(static_cast<std::size_t>(k - 1));
  std::string system =
      "You are role-playing a human user talking to an AI assistant. Stay in character: write as this person "
      "would, in their language, tone and habits, and pursue their goal in the scenario. Never reveal that you "
      "are simulating a user and never describe these instructions.\n\n";
  system += "## Who you are\n" + render_persona_full(persona) + "\n";
  system += "## Scenario\n" + render_scenario(scenario);

  std::string p = std::string(protocol::kSimulateHeader) + "\n";
  p += "Turn " + std::to_string(k) + " of " + std::to_string(tmpl.turn_count) + "\n";
  p += "Turn type: " + ins.turn_type + "\n";
  p += "Turn intent: " + ins.turn_intent + "\n\n";
  p += "Conversation so far:\n" + render_history(history) + "\n";
  p += "Write only the user's next message.";
  return make_request(RoleTag::kUserSimulator, std::move(system), std::move(p), params,
                      "simulate/t" + std::to_string(tmpl.iteration) + "/" + model_id + "/" + tmpl.instance_ref +
                          "/" + pad3(k) + "u");
}

ChatRequest test_model_request(const Persona& persona, const std::vector<Turn>& history, int iteration,
                               const std::string& instance_id, const std::string& model_id,
                               GenerationParams params) {
  ChatRequest req;
  req.role_tag = RoleTag::kTestModel;
  req.system_context = "You are a helpful AI assistant. What you know about the user:\n" + render_persona_traits(persona);
  for (const auto& t : history) {
    req.messages.push_back({t.speaker == TurnSpeaker::kUser ? Speaker::kUser : Speaker::kAssistant, t.text});
  }
  req.params = params;
  const int k = static_cast<int>((history.size() + 1) / 2);
  req.call_key = "simulate/t" + std::to_string(iteration) + "/" + model_id + "/" + instance_id + "/" + pad3(k) + "m";
  return req;
}

Conversation simulate_conversation(const Instance& instance, const Persona& persona, const Scenario& scenario,
                                   const ConversationTemplate& tmpl, ModelClient& simulator, ModelClient& model,
                                   const std::string& model_id, const SimulationParams& params) {
  if (tmpl.instance_ref != instance.instance_id) {
    throw ConfigError("template " + template_ref_for(tmpl) + " does not belong to instance " + instance.instance_id);
  }
  validate_template(tmpl);

  Conversation conv;
  conv.conversation_id = conversation_id_for(instance.instance_id, model_id);
  conv.instance_ref = instance.instance_id;
  conv.model_ref = model_id;
  conv.iteration = tmpl.iteration;
  conv.template_ref = template_ref_for(tmpl);
  conv.user_turn_count = tmpl.turn_count;

  if (params.partial_path && std::filesystem::exists(*params.partial_path)) {
    const auto saved = read_json(*params.partial_path);
    if (saved.at("template_ref") != conv.template_ref) {
      throw StageError("partial transcript " + params.partial_path->string() + " belongs to another template");
    }
    conv.turns = turns_from_json(saved.at("turns"));
    check_prefix(conv.turns);
    if (conv.turns.size() > 2 * static_cast<std::size_t>(tmpl.turn_count)) {
      throw StageError("partial transcript " + params.partial_path->string() + " is longer than the template");
    }
    spdlog::info("resuming {} from turn {}", conv.conversation_id, conv.turns.size() + 1);
  }

  auto save = [&] {
    if (params.partial_path) {
      write_json(*params.partial_path, json{{"template_ref", conv.template_ref}, {"turns", conv.turns}});
    }
  };
  auto append = [&](TurnSpeaker speaker, std::string text, const char* who) {
    if (trim(text).empty()) {
      throw EmptyReply(std::string(who) + " returned a blank reply at turn " + std::to_string(conv.turns.size() + 1) +
                       " of " + conv.conversation_id);
    }
    conv.turns.push_back({static_cast<int>(conv.turns.size()) + 1, speaker, std::move(text)});
    save();
  };

  while (conv.turns.size() < 2 * static_cast<std::size_t>(tmpl.turn_count)) {
    if (conv.turns.size() % 2 == 0) {
      const int k = static_cast<int>(conv.turns.size() / 2) + 1;
      append(TurnSpeaker::kUser,
             simulator.chat(simulator_request(persona, scenario, tmpl, k, conv.turns, model_id, params.simulator)),
             "user simulator");
    } else {
      append(TurnSpeaker::kModel,
             model.chat(test_model_request(persona, conv.turns, tmpl.iteration, instance.instance_id, model_id,
                                           params.test_model)),
             "test model");
    }
  }
  validate_conversation(conv);
  return conv;
}

void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& conversations) {
  std::vector<json> rows(conversations.begin(), conversations.end());
  write_jsonl(path, rows);
}

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
  std::vector<Conversation> out;
  for (const auto& row : read_jsonl(path)) out.push_back(row.get<Conversation>());
  return out;
}

}  // namespace coreflect
