#include <gtest/gtest.h>

#include "coreflect/planner.hpp"
#include "coreflect/protocol.hpp"
#include "coreflect/simulator.hpp"
#include "fixtures.hpp"

using namespace coreflect;

namespace {

ConversationTemplate make_template(int n) {
  ConversationTemplate t;
  t.instance_ref = "P1_S1";
  t.turn_count = n;
  for (int k = 1; k <= n; ++k) {
    t.instructions.push_back({k, k == 1 ? "Early Turn" : "Intermediate Turn", "Intent number " + std::to_string(k),
                              "EVAL-NOTE-" + std::to_string(k)});
  }
  return t;
}

const Instance kInstance{"P1_S1", "P1", "S1"};

}  // namespace

TEST(Simulate, ExactlyNAlternatingTurns) {
  auto sim = fixtures::scripted_client(1);
  auto model = fixtures::scripted_client(2);
  const auto c = simulate_conversation(kInstance, fixtures::persona("P1"), fixtures::scenario("S1"), make_template(4),
                                       *sim, *model, "model-a", {});
  EXPECT_EQ(c.user_turn_count, 4);
  ASSERT_EQ(c.turns.size(), 8u);
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    EXPECT_EQ(c.turns[i].speaker, i % 2 == 0 ? TurnSpeaker::kUser : TurnSpeaker::kModel);
    EXPECT_EQ(c.turns[i].index, static_cast<int>(i) + 1);
  }
  EXPECT_EQ(c.conversation_id, "P1_S1/model-a");
  EXPECT_EQ(c.template_ref, "P1_S1@t1");
  EXPECT_EQ(c.model_texts().size(), 4u);
  EXPECT_NO_THROW(validate_conversation(c));
  EXPECT_EQ(json(c).get<Conversation>(), c);
}

TEST(Simulate, PromptsRespectInformationAsymmetry) {
  const auto persona = fixtures::persona("P1", "Data analyst", "HIDDEN-PREF");
  const auto scenario = fixtures::scenario("S1", TurnComplexity::kMedium, "HIDDEN-SITUATION");
  const auto tmpl = make_template(3);
  std::vector<Turn> history = {{1, TurnSpeaker::kUser, "first"}, {2, TurnSpeaker::kModel, "answer"}};

  const auto sim = simulator_request(persona, scenario, tmpl, 2, history, "m", {});
  const auto sim_text = sim.rendered();
  EXPECT_NE(sim_text.find("HIDDEN-PREF"), std::string::npos);
  EXPECT_NE(sim_text.find("HIDDEN-SITUATION"), std::string::npos);
  EXPECT_NE(sim_text.find("Intent number 2"), std::string::npos);
  // Neither evaluation notes nor later instructions reach the simulator.
  EXPECT_EQ(sim_text.find("EVAL-NOTE"), std::string::npos);
  EXPECT_EQ(sim_text.find("Intent number 3"), std::string::npos);
  EXPECT_EQ(sim.role_tag, RoleTag::kUserSimulator);

  history.push_back({3, TurnSpeaker::kUser, "second"});
  const auto model = test_model_request(persona, history, 1, "P1_S1", "m", {});
  const auto model_text = model.rendered();
  EXPECT_EQ(model_text.find("HIDDEN-PREF"), std::string::npos);
  EXPECT_EQ(model_text.find("HIDDEN-SITUATION"), std::string::npos);
  EXPECT_EQ(model_text.find("Intent number"), std::string::npos);
  EXPECT_NE(model_text.find("works with spreadsheets daily"), std::string::npos);
  ASSERT_EQ(model.messages.size(), 3u);
  EXPECT_EQ(model.messages.back().text, "second");
}

TEST(Simulate, EmptyReplyRaises) {
  auto sim = fixtures::fn_client([](const ChatRequest&) { return std::string("   "); });
  auto model = fixtures::scripted_client(2);
  EXPECT_THROW(simulate_conversation(kInstance, fixtures::persona("P1"), fixtures::scenario("S1"), make_template(2),
                                     *sim.client, *model, "m", {}),
               EmptyReply);
}

TEST(Simulate, ResumesFromPartialTranscript) {
  fixtures::TempDir dir;
  SimulationParams params;
  params.partial_path = dir / "partial/m/P1_S1.json";

  // Reference run without interruption.
  auto sim_a = fixtures::scripted_client(1);
  auto model_a = fixtures::scripted_client(2);
  const auto reference = simulate_conversation(kInstance, fixtures::persona("P1"), fixtures::scenario("S1"),
                                               make_template(4), *sim_a, *model_a, "m", {});

  // The model fails on its third turn.
  int model_calls = 0;
  auto failing = fixtures::fn_client(
      [&](const ChatRequest& r) -> std::string {
        if (++model_calls == 3) throw BackendError("connection reset");
        return "Here is my response to your request (quality:" + std::to_string(r.messages.size() % 5 + 1) + ").";
      },
      1);
  auto sim_b = fixtures::scripted_client(1);
  EXPECT_THROW(simulate_conversation(kInstance, fixtures::persona("P1"), fixtures::scenario("S1"), make_template(4),
                                     *sim_b, *failing.client, "m", params),
               BackendError);
  ASSERT_TRUE(std::filesystem::exists(*params.partial_path));
  const auto partial = read_json(*params.partial_path);
  EXPECT_EQ(partial["turns"].size(), 5u);  // two full exchanges plus the third user turn

  // Resuming makes calls only for the missing turns.
  auto sim_c = fixtures::scripted_client(1);
  auto model_c = fixtures::scripted_client(2);
  const auto resumed = simulate_conversation(kInstance, fixtures::persona("P1"), fixtures::scenario("S1"),
                                             make_template(4), *sim_c, *model_c, "m", params);
  EXPECT_EQ(resumed.turns.size(), 8u);
  EXPECT_EQ(model_c->log()->size(), 2u);
  EXPECT_EQ(sim_c->log()->size(), 1u);
  EXPECT_EQ(resumed.turns[6], reference.turns[6]);
}

TEST(Conversation, ValidationRejectsBrokenAlternation) {
  Conversation c;
  c.conversation_id = "a/b";
  c.instance_ref = "a";
  c.model_ref = "b";
  c.template_ref = "a@t1";
  c.user_turn_count = 1;
  c.turns = {{1, TurnSpeaker::kModel, "x"}, {2, TurnSpeaker::kUser, "y"}};
  EXPECT_THROW(validate_conversation(c), SchemaError);
}
