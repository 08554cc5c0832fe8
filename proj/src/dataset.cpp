#include "coreflect/dataset.hpp"

#include <map>
#include <optional>

#include <spdlog/spdlog.h>

#include "coreflect/parallel.hpp"
#include "coreflect/protocol.hpp"

namespace coreflect {

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPending: return "pending";
    case Verdict::kAccepted: return "accepted";
    case Verdict::kRejected: return "rejected";
  }
  return "";
}

std::string instance_id_for(std::string_view persona_id, std::string_view scenario_id) {
  return std::string(persona_id) + "_" + std::string(scenario_id);
}

std::vector<CandidatePair> generate_candidate_pairs(const std::vector<Persona>& personas,
                                                    const std::vector<Scenario>& scenarios) {
  std::vector<CandidatePair> out;
  out.reserve(personas.size() * scenarios.size());
  for (const auto& p : personas) {
    for (const auto& s : scenarios) out.push_back({p.id, s.id, Verdict::kPending, {}});
  }
  return out;
}

const std::string& verifier_prompt_template() {
  static const std::string kTemplate = std::string(protocol::kVerifyHeader) +
                                       "\n"
                                       "You are a logical reasoning expert. Evaluate whether the following "
                                       "persona-scenario pairing is plausible: could a person in this role "
                                       "realistically start this conversation with an AI assistant?\n"
                                       "\n"
                                       "Persona role: {role}\n"
                                       "Scenario title: {title}\n"
                                       "Scenario core task: {core_task}\n"
                                       "\n"
                                       "Answer with only a single word, \"Yes\" or \"No\".";
  return kTemplate;
}

namespace {

std::string fill(std::string text, std::string_view key, std::string_view value) {
  const std::string placeholder = "{" + std::string(key) + "}";
  for (auto pos = text.find(placeholder); pos != std::string::npos; pos = text.find(placeholder, pos + value.size())) {
    text.replace(pos, placeholder.size(), value);
  }
  return text;
}

std::optional<Verdict> normalize_verdict(std::string_view reply) {
  const auto word = to_lower(trim(reply));
  if (word == "yes") return Verdict::kAccepted;
  if (word == "no") return Verdict::kRejected;
  return std::nullopt;
}

constexpr const char* kStrictReprompt =
    "CORRECTION: your reply must be exactly one word. Reply with only \"Yes\" or \"No\" and nothing else.";

}  // namespace

ChatRequest verifier_request(const Persona& persona, const Scenario& scenario, GenerationParams params) {
  auto prompt = fill(verifier_prompt_template(), "role", persona.role);
  prompt = fill(prompt, "title", scenario.title);
  prompt = fill(prompt, "core_task", scenario.core_task);
  return make_request(RoleTag::kVerifier, "", std::move(prompt), params,
                      "dataset/" + instance_id_for(persona.id, scenario.id) + "/a1");
}

CandidatePair check_consistency(CandidatePair pair, const Persona& persona, const Scenario& scenario,
                                ModelClient& verifier, GenerationParams params) {
  if (pair.verdict != Verdict::kPending) {
    throw ConfigError("consistency check on a pair that already has a verdict");
  }
  auto request = verifier_request(persona, scenario, params);
  auto reply = verifier.chat(request);
  auto verdict = normalize_verdict(reply);
  if (!verdict) {
    request.messages.push_back({Speaker::kAssistant, reply});
    request.messages.push_back({Speaker::kUser, kStrictReprompt});
    request.call_key = "dataset/" + instance_id_for(persona.id, scenario.id) + "/a2";
    reply = verifier.chat(request);
    verdict = normalize_verdict(reply);
    if (!verdict) {
      throw MalformedVerdict("verifier reply for " + instance_id_for(persona.id, scenario.id) +
                             " is not Yes/No after retry: '" + reply + "'");
    }
  }
  pair.verdict = *verdict;
  pair.verdict_raw = reply;
  return pair;
}

Dataset build_dataset(const std::vector<Persona>& personas, const std::vector<Scenario>& scenarios,
                      ModelClient& verifier, const BuildOptions& options) {
  std::map<std::string, const Persona*> persona_by_id;
  std::map<std::string, const Scenario*> scenario_by_id;
  for (const auto& p : personas) persona_by_id[p.id] = &p;
  for (const auto& s : scenarios) scenario_by_id[s.id] = &s;

  auto pairs = generate_candidate_pairs(personas, scenarios);
  std::vector<std::optional<CandidatePair>> results(pairs.size());
  std::vector<std::string> transport_errors(pairs.size());

  auto run_pass = [&](const std::vector<std::size_t>& indices) {
    parallel_for(indices.size(), options.max_in_flight, [&](std::size_t n) {
      const auto i = indices[n];
      try {
        results[i] = check_consistency(pairs[i], *persona_by_id.at(pairs[i].persona_ref),
                                       *scenario_by_id.at(pairs[i].scenario_ref), verifier, options.params);
        transport_errors[i].clear();
      } catch (const BackendError& e) {
        transport_errors[i] = e.what();
      }
    });
  };
  auto failed_indices = [&] {
    std::vector<std::size_t> failed;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (!results[i]) failed.push_back(i);
    }
    return failed;
  };

  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  run_pass(all);

  auto failed = failed_indices();
  if (!pairs.empty() &&
      static_cast<double>(failed.size()) > options.max_transport_failure_fraction * static_cast<double>(pairs.size())) {
    throw BackendError("aborting dataset build: " + std::to_string(failed.size()) + " of " +
                       std::to_string(pairs.size()) + " verifier calls failed; first: " +
                       transport_errors[failed.front()]);
  }
  if (!failed.empty()) {
    spdlog::warn("retrying {} verifier calls that failed at the transport level", failed.size());
    run_pass(failed);
    failed = failed_indices();
    if (!failed.empty()) {
      throw BackendError("aborting dataset build: " + std::to_string(failed.size()) +
                         " verifier calls still failing; first: " + transport_errors[failed.front()]);
    }
  }

  Dataset ds;
  ds.provenance.candidates = pairs.size();
  for (const auto& r : results) {
    if (r->verdict == Verdict::kAccepted) {
      ds.instances.push_back({instance_id_for(r->persona_ref, r->scenario_ref), r->persona_ref, r->scenario_ref});
      ++ds.provenance.accepted;
    } else {
      ds.rejected.push_back({r->persona_ref, r->scenario_ref, r->verdict_raw});
      ++ds.provenance.rejected;
      spdlog::info("consistency check rejected {}: '{}'", instance_id_for(r->persona_ref, r->scenario_ref),
                   r->verdict_raw);
    }
  }
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::vector<json> rows;
  for (const auto& inst : dataset.instances) rows.emplace_back(inst);
  write_jsonl(dir / "dataset.jsonl", rows);

  json rejected = json::array();
  for (const auto& r : dataset.rejected) {
    rejected.push_back({{"persona_ref", r.persona_ref}, {"scenario_ref", r.scenario_ref}, {"verdict_raw", r.verdict_raw}});
  }
  write_json(dir / "dataset.meta.json",
             json{{"provenance",
                   {{"candidates", dataset.provenance.candidates},
                    {"accepted", dataset.provenance.accepted},
                    {"rejected", dataset.provenance.rejected}}},
                  {"rejected_pairs", rejected}});
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  for (const auto& row : read_jsonl(dir / "dataset.jsonl")) ds.instances.push_back(row.get<Instance>());
  const auto meta = read_json(dir / "dataset.meta.json");
  ds.provenance.candidates = meta.at("provenance").at("candidates").get<std::size_t>();
  ds.provenance.accepted = meta.at("provenance").at("accepted").get<std::size_t>();
  ds.provenance.rejected = meta.at("provenance").at("rejected").get<std::size_t>();
  for (const auto& r : meta.at("rejected_pairs")) {
    ds.rejected.push_back({r.at("persona_ref"), r.at("scenario_ref"), r.at("verdict_raw")});
  }
  if (ds.provenance.accepted + ds.provenance.rejected != ds.provenance.candidates ||
      ds.instances.size() != ds.provenance.accepted) {
    throw SchemaError("dataset.meta.json", "provenance counts are inconsistent with dataset.jsonl");
  }
  return ds;
}

}  // namespace coreflect
