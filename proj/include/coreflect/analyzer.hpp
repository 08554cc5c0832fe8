#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coreflect/gateway.hpp"
#include "coreflect/judge.hpp"
#include "coreflect/model.hpp"

namespace coreflect {

enum class Tier { kHigh, kLow };
std::string_view to_string(Tier t);

/// Identifies one rationale: the rating of `rubric_name` in one conversation.
struct RationaleKey {
  std::string conversation_ref;
  std::string rubric_name;

  auto operator<=>(const RationaleKey&) const = default;
  std::string str() const { return conversation_ref + "#" + rubric_name; }
};

struct TierPartition {
  std::vector<RationaleKey> high;
  std::vector<RationaleKey> low;
  double high_threshold = 0.0;  // lowest r~ admitted to the high tier
  double low_threshold = 0.0;   // highest r~ admitted to the low tier
};

struct PoolSample {
  std::string rationale;
  Tier tier = Tier::kHigh;
  RationaleKey key;
};

struct AnalysisPool {
  std::vector<PoolSample> samples;  // n high samples, then n low samples
  std::size_t per_tier_count = 0;
};

struct BehavioralFamily {
  std::string family_id;  // "F<t>-<l>"
  std::vector<RationaleKey> member_keys;
  std::vector<std::string> member_rationales;
  EmbeddingVector centroid;
  std::string label;
  Polarity polarity = Polarity::kUndesirable;
};

struct ClusterParams {
  int k_min = 2;
  int k_max = 8;
  std::uint64_t seed = 0;
  int restarts = 8;
};

struct FamilyDiscovery {
  std::vector<BehavioralFamily> families;
  double silhouette = 0.0;
  /// Set when every embedding was identical (DegenerateClustering).
  bool degenerate = false;
};

/// Ranks conversations by r~ (descending, ties by conversation id) and takes
/// the top and bottom floor(fraction * n) into the tiers. Every rubric
/// rationale of a tier conversation becomes a key of that tier.
TierPartition partition_tiers(const std::vector<EvaluationRecord>& evaluations, double tier_fraction);

/// n uniform draws without replacement from each tier.
AnalysisPool sample_balanced(const TierPartition& partition, const std::vector<EvaluationRecord>& evaluations,
                             std::size_t n, std::uint64_t seed);

/// Embeds the pool rationales and clusters them. Families are numbered by the
/// position of their first member in the pool.
FamilyDiscovery discover_families(const AnalysisPool& pool, ModelClient& embedder, const ClusterParams& params,
                                  int iteration);

ChatRequest insight_request(const BehavioralFamily& family, int iteration, GenerationParams params);

/// Reply format: a ```insight block with `description:` and `criteria:` lines.
Insight parse_insight_reply(std::string_view reply, const BehavioralFamily& family, int iteration);

/// One insight per family ("I<t>-<l>" mirrors "F<t>-<l>"); polarity is the
/// family's. A reply that does not parse gets one retry, then ParseError.
std::vector<Insight> synthesize_insights(const std::vector<BehavioralFamily>& families, ModelClient& analyzer,
                                         int iteration, GenerationParams params);

struct ChangelogEntry {
  std::string rubric;
  std::string status;  // "applied" | "unchanged" | "UpdateRejected"
  std::vector<std::string> fields;
  std::vector<std::string> insight_ids;
  std::string reason;
};

struct RubricUpdate {
  RubricSet rubrics;  // iteration t+1
  std::vector<ChangelogEntry> changelog;
};

/// Rubric names an insight's family drew its rationales from, most frequent
/// first; passed to the analyzer as attribution hints.
std::vector<std::string> insight_rubric_hints(const Insight& insight, const std::vector<BehavioralFamily>& families);

ChatRequest update_request(const RubricSet& rubrics, const std::vector<Insight>& insights,
                           const std::vector<BehavioralFamily>& families, GenerationParams params);

/// Applies an analyzer revision reply. Only description, anchors and
/// evidence_cues may change, and each change must cite an existing insight
/// id. Renames, additions and removals are rejected per rubric and logged.
RubricUpdate apply_revisions(const RubricSet& rubrics, const std::vector<Insight>& insights, std::string_view reply);

/// Produces the rubric set for iteration t+1. With no insights no call is
/// made and rubric content is unchanged.
RubricUpdate update_rubrics(const RubricSet& rubrics, const std::vector<Insight>& insights,
                            const std::vector<BehavioralFamily>& families, ModelClient& analyzer,
                            GenerationParams params);

json families_to_json(const std::vector<BehavioralFamily>& families, const FamilyDiscovery& meta);
std::vector<BehavioralFamily> families_from_json(const json& j);
json changelog_to_json(const std::vector<ChangelogEntry>& entries, int iteration);

}  // namespace coreflect
