#include <gtest/gtest.h>

#include "coreflect/judge.hpp"
#include "coreflect/protocol.hpp"
#include "fixtures.hpp"

using namespace coreflect;

namespace {

std::string ratings(const std::string& odi_score = "4", const std::string& extra = "") {
  return "ODI | " + odi_score + " | Delivered the summary.\n"
         "DCA | 5 | Correct terms.\n"
         "FTP | 3 | Stalled at turn 2.\n"
         "AFM | 4 | Anticipated the next question.\n"
         "OSF | 4 | Used bullets as asked.\n"
         "SSA | 2 | Drifted into long prose.\n" +
         extra;
}

struct Fixture {
  Persona persona = fixtures::persona("P1");
  Scenario scenario = fixtures::scenario("S1", TurnComplexity::kShort);
  RubricSet rubrics = default_rubric_set();
  ConversationTemplate tmpl;
  Conversation conversation;

  Fixture() {
    Instance inst{"P1_S1", "P1", "S1"};
    auto planner = fixtures::scripted_client(1);
    tmpl = plan_template(inst, persona, scenario, rubrics, {}, *planner, 1, {});
    auto sim = fixtures::scripted_client(2);
    auto model = fixtures::scripted_client(3);
    conversation = simulate_conversation(inst, persona, scenario, tmpl, *sim, *model, "m", {});
  }
};

}  // namespace

TEST(RatingBlock, ParsesInRubricOrder) {
  const auto r = parse_rating_block("Preamble line\n" + ratings(), default_rubric_set());
  ASSERT_EQ(r.size(), 6u);
  EXPECT_EQ(r[0].rubric_name, "ODI");
  EXPECT_EQ(r[5].rating, 2);
  EXPECT_EQ(r[5].rationale, "Drifted into long prose.");
}

TEST(RatingBlock, NamesMissingAndDuplicateRubrics) {
  auto missing = ratings();
  missing.erase(missing.find("SSA"));
  try {
    parse_rating_block(missing, default_rubric_set());
    FAIL();
  } catch (const JudgeParseError& e) {
    EXPECT_NE(std::string(e.what()).find("SSA missing"), std::string::npos);
  }
  try {
    parse_rating_block(ratings("4", "ODI | 1 | Again.\n"), default_rubric_set());
    FAIL();
  } catch (const JudgeParseError& e) {
    EXPECT_NE(std::string(e.what()).find("ODI duplicate"), std::string::npos);
  }
}

TEST(RatingBlock, ScoreMustBeIntegerOneToFive) {
  for (const auto* bad : {"3.5", "0", "6", "four", "4/5"}) {
    EXPECT_THROW(parse_rating_block(ratings(bad), default_rubric_set()), RatingRangeError) << bad;
  }
}

TEST(RatingBlock, RationaleRequired) {
  auto r = ratings();
  r.replace(r.find("Correct terms."), 14, "");
  EXPECT_THROW(parse_rating_block(r, default_rubric_set()), JudgeParseError);
}

TEST(Observations, OnePerModelTurn) {
  const auto obs = parse_observations("TURN 1: fine\nTURN 2: drifted", 2);
  ASSERT_EQ(obs.size(), 2u);
  EXPECT_EQ(obs[1].observation, "drifted");
  EXPECT_THROW(parse_observations("TURN 1: fine", 2), JudgeParseError);
  EXPECT_THROW(parse_synthesis("nothing useful"), JudgeParseError);
  EXPECT_EQ(parse_synthesis("STRENGTH: a\nWEAKNESS: b").weaknesses, std::vector<std::string>{"b"});
}

TEST(Evaluate, ThreeStepsCarryEarlierReplies) {
  Fixture f;
  auto log = std::make_shared<CallLog>(true);
  auto judge = fixtures::scripted_client(4, {}, log);
  const auto rec = evaluate_conversation(f.conversation, f.tmpl, f.persona, f.scenario, f.rubrics, *judge, {});
  EXPECT_EQ(rec.ratings.size(), 6u);
  EXPECT_EQ(static_cast<int>(rec.observations.size()), f.conversation.user_turn_count);
  const auto records = log->records();
  ASSERT_EQ(records.size(), 3u);
  const auto step3 = records[2].request.dump();
  EXPECT_NE(step3.find(protocol::kJudgeRateHeader), std::string::npos);
  EXPECT_NE(step3.find("STRENGTH:"), std::string::npos);
  EXPECT_NE(step3.find("TURN 1:"), std::string::npos);
  double sum = 0;
  for (const auto& r : rec.ratings) sum += r.rating;
  EXPECT_DOUBLE_EQ(rec.conversation_rating(), sum / 6.0);
  EXPECT_EQ(json(rec).get<EvaluationRecord>(), rec);
}

TEST(Evaluate, OneCorrectiveRetryPerStep) {
  Fixture f;
  int rate_calls = 0;
  auto fallback = fixtures::scripted_client(4);
  auto c = fixtures::fn_client([&](const ChatRequest& r) {
    if (r.messages.front().text.rfind(protocol::kJudgeRateHeader, 0) == 0) {
      return ++rate_calls == 1 ? ratings("3.5") : ratings();
    }
    return fallback->chat(r);
  });
  const auto rec = evaluate_conversation(f.conversation, f.tmpl, f.persona, f.scenario, f.rubrics, *c.client, {});
  EXPECT_EQ(rate_calls, 2);
  EXPECT_EQ(rec.ratings[0].rating, 4);
}

TEST(Evaluate, RubricIterationMustMatch) {
  Fixture f;
  auto rubrics = f.rubrics;
  rubrics.iteration = 2;
  auto judge = fixtures::scripted_client(4);
  EXPECT_THROW(evaluate_conversation(f.conversation, f.tmpl, f.persona, f.scenario, rubrics, *judge, {}), Error);
}
