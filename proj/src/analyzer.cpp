#include "coreflect/analyzer.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "coreflect/clustering.hpp"
#include "coreflect/protocol.hpp"

namespace coreflect {

std::string_view to_string(Tier t) { return t == Tier::kHigh ? "high" : "low"; }

namespace {

constexpr std::size_t kLabelMaxBytes = 120;

std::string truncate_utf8(const std::string& s, std::size_t max_bytes) {
  if (s.size() <= max_bytes) return s;
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  return s.substr(0, cut) + "...";
}

const RubricRating* find_rating(const EvaluationRecord& rec, const std::string& rubric) {
  for (const auto& r : rec.ratings) {
    if (r.rubric_name == rubric) return &r;
  }
  return nullptr;
}

}  // namespace

TierPartition partition_tiers(const std::vector<EvaluationRecord>& evaluations, double tier_fraction) {
  if (!(tier_fraction > 0.0 && tier_fraction <= 0.5)) throw ConfigError("tier_fraction must be in (0, 0.5]");
  if (evaluations.empty()) throw InsufficientData("no evaluations to partition");

  struct Ranked {
    double score;
    const EvaluationRecord* rec;
  };
  std::vector<Ranked> ranked;
  std::set<std::string> ids;
  for (const auto& e : evaluations) {
    if (!ids.insert(e.conversation_ref).second) throw InsufficientData("duplicate evaluation for " + e.conversation_ref);
    ranked.push_back({e.conversation_rating(), &e});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.rec->conversation_ref < b.rec->conversation_ref;
  });

  const auto n = ranked.size();
  const auto m = static_cast<std::size_t>(tier_fraction * static_cast<double>(n) + 1e-9);
  if (m < 1) {
    throw InsufficientData("tier_fraction " + std::to_string(tier_fraction) + " of " + std::to_string(n) +
                           " conversations leaves a tier empty");
  }
  TierPartition p;
  auto add_keys = [](std::vector<RationaleKey>& out, const EvaluationRecord& rec) {
    for (const auto& r : rec.ratings) out.push_back({rec.conversation_ref, r.rubric_name});
  };
  for (std::size_t i = 0; i < m; ++i) add_keys(p.high, *ranked[i].rec);
  for (std::size_t i = n - m; i < n; ++i) add_keys(p.low, *ranked[i].rec);
  p.high_threshold = ranked[m - 1].score;
  p.low_threshold = ranked[n - m].score;
  return p;
}

AnalysisPool sample_balanced(const TierPartition& partition, const std::vector<EvaluationRecord>& evaluations,
                             std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InsufficientData("per-tier sample size must be at least 1");
  if (partition.high.size() < n || partition.low.size() < n) {
    throw InsufficientData("cannot draw " + std::to_string(n) + " samples per tier from tiers of size " +
                           std::to_string(partition.high.size()) + " and " + std::to_string(partition.low.size()));
  }
  std::map<std::string, const EvaluationRecord*> by_id;
  for (const auto& e : evaluations) by_id[e.conversation_ref] = &e;

  AnalysisPool pool;
  pool.per_tier_count = n;
  for (auto [tier, keys] : {std::pair{Tier::kHigh, &partition.high}, std::pair{Tier::kLow, &partition.low}}) {
    std::vector<std::size_t> order(keys->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, std::string("sample/") + std::string(to_string(tier))));
    // Partial Fisher-Yates: the first n slots are a uniform n-subset.
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + rng.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& key = (*keys)[order[i]];
      const auto it = by_id.find(key.conversation_ref);
      const RubricRating* rating = it == by_id.end() ? nullptr : find_rating(*it->second, key.rubric_name);
      if (rating == nullptr) throw InsufficientData("no rationale for " + key.str());
      pool.samples.push_back({rating->rationale, tier, key});
    }
  }
  return pool;
}

FamilyDiscovery discover_families(const AnalysisPool& pool, ModelClient& embedder, const ClusterParams& params,
                                  int iteration) {
  if (pool.samples.empty()) throw InsufficientData("empty analysis pool");
  if (params.k_min < 1 || params.k_max < params.k_min) throw ConfigError("cluster bounds must satisfy 1 <= k_min <= k_max");

  std::vector<std::string> texts;
  for (const auto& s : pool.samples) texts.push_back(s.rationale);
  const auto vectors = embedder.embed(texts, "reflect/t" + std::to_string(iteration) + "/embed");
  std::vector<Point> points;
  for (const auto& v : vectors) points.push_back(normalized(v.values));

  const int k_max = std::min(params.k_max, static_cast<int>(points.size()));
  const int k_min = std::min(params.k_min, k_max);
  const auto sel = select_clustering(points, k_min, k_max, params.seed, params.restarts);

  FamilyDiscovery out;
  out.silhouette = sel.silhouette;
  out.degenerate = sel.degenerate;
  if (sel.degenerate) {
    spdlog::warn("DegenerateClustering: all {} rationale embeddings are identical; using one family", points.size());
  }

  // Families are numbered by first appearance in the pool.
  std::map<int, std::size_t> family_of_label;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int label = sel.clustering.labels[i];
    auto [it, inserted] = family_of_label.emplace(label, out.families.size());
    if (inserted) {
      BehavioralFamily f;
      f.family_id = "F" + std::to_string(iteration) + "-" + std::to_string(out.families.size() + 1);
      out.families.push_back(std::move(f));
    }
    auto& f = out.families[it->second];
    f.member_keys.push_back(pool.samples[i].key);
    f.member_rationales.push_back(pool.samples[i].rationale);
  }

  for (auto& [label, index] : family_of_label) {
    auto& f = out.families[index];
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (sel.clustering.labels[i] == label) members.push_back(i);
    }
    Point centroid(points.front().size(), 0.0);
    std::size_t high = 0;
    for (auto i : members) {
      for (std::size_t d = 0; d < centroid.size(); ++d) centroid[d] += points[i][d];
      if (pool.samples[i].tier == Tier::kHigh) ++high;
    }
    centroid = normalized(std::move(centroid));
    f.centroid.values = centroid;
    f.polarity = 2 * high > members.size() ? Polarity::kDesirable : Polarity::kUndesirable;

    std::size_t nearest = members.front();
    double best = cosine_distance(points[nearest], centroid);
    for (auto i : members) {
      const double d = cosine_distance(points[i], centroid);
      if (d < best - 1e-15) {
        best = d;
        nearest = i;
      }
    }
    f.label = truncate_utf8(pool.samples[nearest].rationale, kLabelMaxBytes);
  }
  return out;
}

ChatRequest insight_request(const BehavioralFamily& family, int iteration, GenerationParams params) {
  std::string p = std::string(protocol::kInsightHeader) + "\n";
  p += "Family: " + family.family_id + "\n";
  p += "Polarity: " + std::string(to_string(family.polarity)) + "\n";
  p += "Label: " + family.label + "\n\n";
  p += "The following judge rationales were grouped into one behavioral family. Describe the model behavior they "
       "share and state the criteria under which that behavior should be rewarded or penalized.\n\n";
  p += "Member rationales:\n";
  for (const auto& r : family.member_rationales) p += "- " + r + "\n";
  p += "\nReply with exactly one fenced block:\n"
       "```insight\n"
       "description: <the shared behavior>\n"
       "criteria: <when to reward or penalize it>\n"
       "```\n";
  return make_request(RoleTag::kAnalyzer, "You are an analyst of conversational assistant behavior.", std::move(p),
                      params, "reflect/t" + std::to_string(iteration) + "/insight/" + family.family_id + "/a1");
}

Insight parse_insight_reply(std::string_view reply, const BehavioralFamily& family, int iteration) {
  const auto block = extract_fenced_block(reply, protocol::kInsightFence);
  if (!block.found) throw ParseError("no ```insight block in analyzer reply");
  std::string description, criteria;
  for (const auto& raw : split_lines(block.body)) {
    const auto line = trim(raw);
    if (starts_with_ci(line, "description:")) description = trim(std::string_view(line).substr(12));
    if (starts_with_ci(line, "criteria:")) criteria = trim(std::string_view(line).substr(9));
  }
  if (description.empty()) throw ParseError("insight description missing");
  if (criteria.empty()) throw ParseError("insight criteria missing");
  Insight ins;
  ins.id = "I" + family.family_id.substr(1);
  ins.family_ref = family.family_id;
  ins.iteration = iteration;
  ins.description = std::move(description);
  ins.polarity = family.polarity;
  ins.reward_or_penalty_criteria = std::move(criteria);
  return ins;
}

namespace {

template <typename Parse>
auto with_parse_retry(ModelClient& analyzer, ChatRequest request, Parse&& parse) {
  auto reply = analyzer.chat(request);
  try {
    return parse(reply);
  } catch (const ParseError& e) {
    request.messages.push_back({Speaker::kAssistant, reply});
    request.messages.push_back({Speaker::kUser, std::string(protocol::kCorrectionHeader) + ": " + e.what() +
                                                    ". Reply again using only the required fenced block."});
    auto& key = request.call_key;
    key = key.substr(0, key.rfind("/a")) + "/a2";
    return parse(analyzer.chat(request));
  }
}

}  // namespace

std::vector<Insight> synthesize_insights(const std::vector<BehavioralFamily>& families, ModelClient& analyzer,
                                         int iteration, GenerationParams params) {
  if (families.empty()) throw InsufficientData("no behavioral families to synthesize");
  std::vector<Insight> out;
  for (const auto& f : families) {
    out.push_back(with_parse_retry(analyzer, insight_request(f, iteration, params),
                                   [&](const std::string& r) { return parse_insight_reply(r, f, iteration); }));
  }
  return out;
}

std::vector<std::string> insight_rubric_hints(const Insight& insight, const std::vector<BehavioralFamily>& families) {
  std::map<std::string, int> counts;
  for (const auto& f : families) {
    if (f.family_id != insight.family_ref) continue;
    for (const auto& k : f.member_keys) ++counts[k.rubric_name];
  }
  std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (auto& [name, count] : sorted) out.push_back(name);
  return out;
}

ChatRequest update_request(const RubricSet& rubrics, const std::vector<Insight>& insights,
                           const std::vector<BehavioralFamily>& families, GenerationParams params) {
  json insight_rows = json::array();
  for (const auto& ins : insights) {
    insight_rows.push_back({{"id", ins.id},
                            {"polarity", to_string(ins.polarity)},
                            {"description", ins.description},
                            {"criteria", ins.reward_or_penalty_criteria},
                            {"rubrics", insight_rubric_hints(ins, families)}});
  }
  std::string p = std::string(protocol::kUpdateHeader) + "\n";
  p += "Iteration: " + std::to_string(rubrics.iteration) + "\n\n";
  p += "Refine the rubrics below using the insights. You may revise a rubric's description, its rating anchors "
       "(keys \"1\" to \"5\") and its evidence cues. Rubric names are fixed: do not rename, add or remove rubrics. "
       "Every revision must cite the ids of the insights that motivate it. Leave rubrics that need no change out "
       "of the list.\n\n";
  p += "Current rubrics:\n```" + std::string(protocol::kRubricsJsonFence) + "\n" + json(rubrics).dump(2) + "\n```\n\n";
  p += "Insights:\n```" + std::string(protocol::kInsightsJsonFence) + "\n" + insight_rows.dump(2) + "\n```\n\n";
  p += "Reply with exactly one fenced block:\n"
       "```json\n"
       "{\"revisions\": [{\"name\": \"<rubric>\", \"description\": \"...\", \"anchors\": {\"1\": \"...\"}, "
       "\"evidence_cues\": [\"...\"], \"insight_ids\": [\"...\"]}]}\n"
       "```\n";
  return make_request(RoleTag::kAnalyzer, "You are an analyst who maintains evaluation rubrics.", std::move(p), params,
                      "reflect/t" + std::to_string(rubrics.iteration) + "/update/a1");
}

RubricUpdate apply_revisions(const RubricSet& rubrics, const std::vector<Insight>& insights, std::string_view reply) {
  const auto block = extract_fenced_block(reply, protocol::kRevisionsFence);
  if (!block.found) throw ParseError("no ```json block in rubric update reply");
  json doc;
  try {
    doc = json::parse(block.body);
  } catch (const json::exception& e) {
    throw ParseError(std::string("rubric update is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("revisions") || !doc["revisions"].is_array()) {
    throw ParseError("rubric update must be an object with a \"revisions\" array");
  }

  std::set<std::string> known_insights;
  for (const auto& i : insights) known_insights.insert(i.id);

  RubricUpdate out;
  out.rubrics = rubrics;
  out.rubrics.iteration = rubrics.iteration + 1;
  std::map<std::string, std::vector<ChangelogEntry>> entries;
  std::vector<ChangelogEntry> additions;
  std::set<std::string> revised;

  auto reject = [&](const std::string& name, std::string reason, std::vector<std::string> ids) {
    spdlog::warn("UpdateRejected for {}: {}", name, reason);
    ChangelogEntry e{name, "UpdateRejected", {}, std::move(ids), std::move(reason)};
    if (rubrics.find(name) == nullptr) {
      additions.push_back(std::move(e));
    } else {
      entries[name].push_back(std::move(e));
    }
  };

  for (const auto& rev : doc["revisions"]) {
    if (!rev.is_object() || !rev.contains("name") || !rev["name"].is_string()) {
      throw ParseError("every revision needs a string \"name\"");
    }
    const auto name = rev["name"].get<std::string>();
    std::vector<std::string> ids;
    if (rev.contains("insight_ids") && rev["insight_ids"].is_array()) {
      for (const auto& id : rev["insight_ids"]) {
        if (id.is_string()) ids.push_back(id.get<std::string>());
      }
    }
    if (rubrics.find(name) == nullptr) {
      reject(name, "proposes adding a rubric", ids);
      continue;
    }
    if (rev.value("remove", false)) {
      reject(name, "proposes removing the rubric", ids);
      continue;
    }
    if (rev.contains("rename_to") && rev["rename_to"] != name) {
      reject(name, "proposes renaming the rubric to " + rev["rename_to"].dump(), ids);
      continue;
    }
    if (!revised.insert(name).second) {
      reject(name, "more than one revision for the same rubric", ids);
      continue;
    }
    if (ids.empty()) {
      reject(name, "revision cites no insight", ids);
      continue;
    }
    if (const auto bad = std::find_if(ids.begin(), ids.end(), [&](const auto& id) { return !known_insights.count(id); });
        bad != ids.end()) {
      reject(name, "revision cites unknown insight " + *bad, ids);
      continue;
    }

    auto& rubric = *std::find_if(out.rubrics.rubrics.begin(), out.rubrics.rubrics.end(),
                                 [&](const Rubric& r) { return r.name == name; });
    Rubric candidate = rubric;
    std::string problem;
    if (rev.contains("description")) {
      if (!rev["description"].is_string() || trim(rev["description"].get<std::string>()).empty()) {
        problem = "description must be a nonempty string";
      } else {
        candidate.description = rev["description"].get<std::string>();
      }
    }
    if (problem.empty() && rev.contains("anchors")) {
      if (!rev["anchors"].is_object()) problem = "anchors must be an object";
      for (auto it = rev["anchors"].begin(); problem.empty() && it != rev["anchors"].end(); ++it) {
        const auto& key = it.key();
        if (key.size() != 1 || key[0] < '1' || key[0] > '5') {
          problem = "anchor key '" + key + "' is not 1..5";
        } else if (!it->is_string() || trim(it->get<std::string>()).empty()) {
          problem = "anchor " + key + " must be a nonempty string";
        } else {
          candidate.anchors[key[0] - '0'] = it->get<std::string>();
        }
      }
    }
    if (problem.empty() && rev.contains("evidence_cues")) {
      if (!rev["evidence_cues"].is_array()) {
        problem = "evidence_cues must be an array";
      } else {
        candidate.evidence_cues.clear();
        for (const auto& c : rev["evidence_cues"]) {
          if (!c.is_string() || trim(c.get<std::string>()).empty()) {
            problem = "evidence cues must be nonempty strings";
            break;
          }
          candidate.evidence_cues.push_back(c.get<std::string>());
        }
      }
    }
    if (!problem.empty()) {
      reject(name, problem, ids);
      continue;
    }

    ChangelogEntry e{name, "applied", {}, ids, ""};
    if (candidate.description != rubric.description) e.fields.push_back("description");
    if (candidate.anchors != rubric.anchors) e.fields.push_back("anchors");
    if (candidate.evidence_cues != rubric.evidence_cues) e.fields.push_back("evidence_cues");
    if (e.fields.empty()) {
      e.status = "unchanged";
      e.reason = "revision repeats the current content";
    } else {
      candidate.version = out.rubrics.iteration;
      rubric = std::move(candidate);
    }
    entries[name].push_back(std::move(e));
  }

  for (const auto& r : rubrics.rubrics) {
    auto it = entries.find(r.name);
    if (it == entries.end()) {
      out.changelog.push_back({r.name, "unchanged", {}, {}, "no revision proposed"});
      continue;
    }
    for (auto& e : it->second) out.changelog.push_back(std::move(e));
  }
  for (auto& e : additions) out.changelog.push_back(std::move(e));
  return out;
}

RubricUpdate update_rubrics(const RubricSet& rubrics, const std::vector<Insight>& insights,
                            const std::vector<BehavioralFamily>& families, ModelClient& analyzer,
                            GenerationParams params) {
  if (insights.empty()) {
    RubricUpdate out;
    out.rubrics = rubrics;
    out.rubrics.iteration = rubrics.iteration + 1;
    for (const auto& r : rubrics.rubrics) out.changelog.push_back({r.name, "unchanged", {}, {}, "no insights"});
    return out;
  }
  auto update = with_parse_retry(analyzer, update_request(rubrics, insights, families, params),
                                 [&](const std::string& r) { return apply_revisions(rubrics, insights, r); });
  validate_rubric_set(json(update.rubrics), rubrics.size());
  return update;
}

json families_to_json(const std::vector<BehavioralFamily>& families, const FamilyDiscovery& meta) {
  json rows = json::array();
  for (const auto& f : families) {
    json members = json::array();
    for (std::size_t i = 0; i < f.member_keys.size(); ++i) {
      members.push_back({{"conversation_ref", f.member_keys[i].conversation_ref},
                         {"rubric_name", f.member_keys[i].rubric_name},
                         {"rationale", f.member_rationales[i]}});
    }
    rows.push_back({{"family_id", f.family_id},
                    {"label", f.label},
                    {"polarity", to_string(f.polarity)},
                    {"centroid", f.centroid.values},
                    {"members", members}});
  }
  return json{{"selected_k", families.size()},
              {"silhouette", meta.silhouette},
              {"degenerate", meta.degenerate},
              {"families", rows}};
}

std::vector<BehavioralFamily> families_from_json(const json& j) {
  std::vector<BehavioralFamily> out;
  try {
    for (const auto& row : j.at("families")) {
      BehavioralFamily f;
      f.family_id = row.at("family_id").get<std::string>();
      f.label = row.at("label").get<std::string>();
      const auto pol = parse_polarity(row.at("polarity").get<std::string>());
      if (!pol) throw SchemaError("families.polarity", "must be desirable or undesirable");
      f.polarity = *pol;
      f.centroid.values = row.at("centroid").get<std::vector<double>>();
      for (const auto& m : row.at("members")) {
        f.member_keys.push_back({m.at("conversation_ref").get<std::string>(), m.at("rubric_name").get<std::string>()});
        f.member_rationales.push_back(m.at("rationale").get<std::string>());
      }
      out.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw SchemaError("families", e.what());
  }
  return out;
}

json changelog_to_json(const std::vector<ChangelogEntry>& entries, int iteration) {
  json rows = json::array();
  for (const auto& e : entries) {
    rows.push_back({{"rubric", e.rubric},
                    {"status", e.status},
                    {"fields", e.fields},
                    {"insight_ids", e.insight_ids},
                    {"reason", e.reason}});
  }
  return json{{"from_iteration", iteration}, {"to_iteration", iteration + 1}, {"entries", rows}};
}

}  // namespace coreflect
