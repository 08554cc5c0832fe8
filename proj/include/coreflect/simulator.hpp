#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"
#include "coreflect/model.hpp"
#include "coreflect/planner.hpp"

namespace coreflect {

enum class TurnSpeaker { kUser, kModel };

struct Turn {
  int index = 1;
  TurnSpeaker speaker = TurnSpeaker::kUser;
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::string conversation_id;  // "<instance>/<model>"
  std::string instance_ref;
  std::string model_ref;
  int iteration = 1;
  std::string template_ref;  // "<instance>@t<iteration>"
  std::vector<Turn> turns;
  int user_turn_count = 0;

  /// Model turns only, in order.
  std::vector<std::string> model_texts() const;
  bool operator==(const Conversation&) const = default;
};

void to_json(json& j, const Turn& v);
void to_json(json& j, const Conversation& v);
void from_json(const json& j, Conversation& v);

/// Throws SchemaError unless turns alternate starting with the user, indices
/// run 1..2N and |turns| = 2 * user_turn_count.
void validate_conversation(const Conversation& c);

std::string conversation_id_for(std::string_view instance_id, std::string_view model_id);
std::string template_ref_for(const ConversationTemplate& tmpl);

/// User-simulator request for turn k (1-based): full persona and scenario in
/// the system context, then the current instruction and the history. Never
/// includes instruction_for_eval or later instructions.
ChatRequest simulator_request(const Persona& persona, const Scenario& scenario, const ConversationTemplate& tmpl,
                              int k, const std::vector<Turn>& history, const std::string& model_id,
                              GenerationParams params);

/// Test-model request: expressive persona traits only, then the dialogue.
ChatRequest test_model_request(const Persona& persona, const std::vector<Turn>& history, int iteration,
                               const std::string& instance_id, const std::string& model_id,
                               GenerationParams params);

struct SimulationParams {
  GenerationParams simulator;
  GenerationParams test_model;
  /// When set, the transcript is saved here after every turn and a
  /// pre-existing file is resumed from.
  std::optional<std::filesystem::path> partial_path;
};

/// Runs exactly N user turns, alternating simulator and test model. Blank
/// replies raise EmptyReply. On any failure the turns completed so far stay
/// in `partial_path`.
Conversation simulate_conversation(const Instance& instance, const Persona& persona, const Scenario& scenario,
                                   const ConversationTemplate& tmpl, ModelClient& simulator, ModelClient& model,
                                   const std::string& model_id, const SimulationParams& params);

void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& conversations);
std::vector<Conversation> read_conversations(const std::filesystem::path& path);

}  // namespace coreflect
