#pragma once

// Headline markers placed at the top of stage prompts. They make call logs easy
// to grep and let the scripted backend's synthetic responder recognize which
// protocol step it is answering.

namespace coreflect::protocol {

inline constexpr const char* kVerifyHeader = "CONSISTENCY CHECK";
inline constexpr const char* kPlanHeader = "PLAN CONVERSATION TEMPLATE";
inline constexpr const char* kSimulateHeader = "SIMULATE USER TURN";
inline constexpr const char* kJudgeObserveHeader = "JUDGE STEP 1: TURN OBSERVATIONS";
inline constexpr const char* kJudgeSynthesizeHeader = "JUDGE STEP 2: CONVERSATION SYNTHESIS";
inline constexpr const char* kJudgeRateHeader = "JUDGE STEP 3: RUBRIC RATINGS";
inline constexpr const char* kInsightHeader = "SYNTHESIZE INSIGHT";
inline constexpr const char* kUpdateHeader = "UPDATE RUBRICS";
inline constexpr const char* kCorrectionHeader = "CORRECTION";

// Planner prompt line: "Allowed turn count: min=<a> max=<b|none>".
inline constexpr const char* kAllowedTurnsLabel = "Allowed turn count:";
// Judge prompt lines.
inline constexpr const char* kModelTurnsLabel = "Model turns to observe:";
inline constexpr const char* kRubricsToRateLabel = "Rubrics to rate:";

// Fence tags.
inline constexpr const char* kTemplateFence = "template";
inline constexpr const char* kInsightFence = "insight";
inline constexpr const char* kRubricsJsonFence = "rubrics-json";
inline constexpr const char* kInsightsJsonFence = "insights-json";
inline constexpr const char* kRevisionsFence = "json";

}  // namespace coreflect::protocol
