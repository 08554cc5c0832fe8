#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "coreflect/gateway.hpp"
#include "coreflect/http_backend.hpp"
#include "coreflect/scripted_backend.hpp"
#include "fixtures.hpp"

using namespace coreflect;

namespace {

ChatRequest request(const std::string& text, const std::string& key = "k") {
  return make_request(RoleTag::kJudge, "system", text, {}, key);
}

}  // namespace

TEST(ChatRequest, DigestCoversContentNotKey) {
  const auto a = request("hello", "a");
  const auto b = request("hello", "b");
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), request("hello!").digest());
  auto c = a;
  c.params.temperature = 0.5;
  EXPECT_NE(a.digest(), c.digest());
  c = a;
  c.role_tag = RoleTag::kPlanner;
  EXPECT_NE(a.digest(), c.digest());
}

TEST(ChatRequest, MessagesMustAlternateAndEndWithUser) {
  auto r = request("hi");
  r.messages.push_back({Speaker::kAssistant, "reply"});
  EXPECT_THROW(r.validate(), ConfigError);
  r.messages.push_back({Speaker::kAssistant, "again"});
  EXPECT_THROW(r.validate(), ConfigError);
}

TEST(ModelClient, RetriesTransientFailuresWithBackoff) {
  int failures_left = 2;
  auto backend = std::make_shared<fixtures::FnBackend>([&](const ChatRequest&) -> std::string {
    if (failures_left-- > 0) throw TransientBackendError("429");
    return "ok";
  });
  BackendConfig cfg;
  cfg.model_id = "m";
  cfg.retry = {4, 100};
  std::vector<long> sleeps;
  auto log = std::make_shared<CallLog>(true);
  ModelClient client(cfg, backend, log, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  EXPECT_EQ(client.chat(request("x")), "ok");
  EXPECT_EQ(sleeps, (std::vector<long>{100, 200}));
  ASSERT_EQ(log->size(), 1u);
  EXPECT_EQ(log->records()[0].attempts, 3);
  EXPECT_EQ(log->records()[0].outcome, "ok");
}

TEST(ModelClient, GivesUpAfterMaxAttempts) {
  auto c = fixtures::fn_client([](const ChatRequest&) -> std::string { throw TransientBackendError("503"); }, 3);
  EXPECT_THROW(c.client->chat(request("x")), BackendError);
  EXPECT_EQ(c.backend->calls(), 3);
  ASSERT_EQ(c.log->size(), 1u);
  EXPECT_EQ(c.log->records()[0].outcome, "error");
}

TEST(ModelClient, FatalErrorsAreNotRetried) {
  auto c = fixtures::fn_client([](const ChatRequest&) -> std::string { throw BackendError("401"); }, 5);
  EXPECT_THROW(c.client->chat(request("x")), BackendError);
  EXPECT_EQ(c.backend->calls(), 1);
}

TEST(ModelClient, BoundsRequestsInFlight) {
  std::atomic<int> active{0}, peak{0};
  auto backend = std::make_shared<fixtures::FnBackend>([&](const ChatRequest&) {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active;
    return std::string("ok");
  });
  BackendConfig cfg;
  cfg.model_id = "m";
  cfg.max_in_flight = 2;
  ModelClient client(cfg, backend, std::make_shared<CallLog>(false));
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { client.chat(request("x")); });
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
}

TEST(CallLog, CanonicalSinkIsOrderedByKey) {
  fixtures::TempDir dir;
  auto log = std::make_shared<CallLog>(false);
  log->open_sink(dir / "calls.jsonl");
  for (const auto* key : {"c", "a", "b"}) {
    CallRecord r;
    r.call_key = key;
    log->append(r);
  }
  log->close_sink_canonical();
  const auto rows = read_call_log(dir / "calls.jsonl");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].call_key, "a");
  EXPECT_EQ(rows[2].call_key, "c");
}

TEST(ScriptedBackend, DigestThenRulesThenFallback) {
  BackendConfig cfg;
  cfg.model_id = "s";
  Script script;
  script.by_digest[request("exact").digest()] = "by digest";
  ScriptRule rule;
  rule.contains = {"needle"};
  rule.reply = "by rule";
  script.rules.push_back(rule);
  ScriptedBackend backend(cfg, script);
  EXPECT_EQ(backend.complete(request("exact")).text, "by digest");
  EXPECT_EQ(backend.complete(request("a needle here")).text, "by rule");
  EXPECT_THROW(backend.complete(request("nothing")), BackendError);
}

TEST(ScriptedBackend, TimesLimitsAFault) {
  BackendConfig cfg;
  cfg.model_id = "s";
  cfg.retry.base_backoff_ms = 0;
  const auto script = parse_script(json::parse(R"({"rules":[
      {"contains":"x","error":"transient","times":1},
      {"contains":"x","reply":"recovered"}]})"));
  auto log = std::make_shared<CallLog>(true);
  ModelClient client(cfg, std::make_shared<ScriptedBackend>(cfg, script), log, [](auto) {});
  EXPECT_EQ(client.chat(request("x")), "recovered");
  EXPECT_EQ(log->records()[0].attempts, 2);
}

TEST(ScriptedBackend, PlantedCentersAreOrthonormal) {
  BackendConfig cfg;
  cfg.model_id = "e";
  cfg.seed = 3;
  cfg.embedding_dim = 16;
  cfg.embedding_noise = 0.05;
  ScriptedBackend backend(cfg, {});
  for (int a = 0; a < 4; ++a) {
    EXPECT_NEAR(cosine_similarity(backend.center(a), backend.center(a)), 1.0, 1e-12);
    for (int b = a + 1; b < 4; ++b) EXPECT_NEAR(cosine_similarity(backend.center(a), backend.center(b)), 0.0, 1e-12);
  }
  const auto v = backend.embed_one("[center:2] text");
  EXPECT_GT(cosine_similarity(v, backend.center(2)), 0.99);
  // Same text, same vector.
  EXPECT_EQ(backend.embed_one("abc").values, backend.embed_one("abc").values);
}

TEST(HttpBackend, RetriesRateLimitsAgainstStubServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits.fetch_add(1) < 2) {
      res.status = 429;
      res.set_content("{\"error\":\"slow down\"}", "application/json");
      return;
    }
    const auto body = json::parse(req.body);
    const auto reply = "echo:" + body["messages"].back()["content"].get<std::string>();
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}}.dump(),
                    "application/json");
  });
  server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    json data = json::array();
    for (std::size_t i = 0; i < body["input"].size(); ++i) {
      data.push_back({{"index", i}, {"embedding", {1.0 * static_cast<double>(i), 2.0}}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig cfg;
  cfg.kind = BackendKind::kHttp;
  cfg.model_id = "stub";
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.retry = {3, 1};
  auto log = std::make_shared<CallLog>(true);
  auto client = make_client(cfg, log, [](auto) {});
  EXPECT_EQ(client->chat(request("ping")), "echo:ping");
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(log->records()[0].attempts, 3);

  const auto vectors = client->embed({"a", "b"}, "embed");
  ASSERT_EQ(vectors.size(), 2u);
  EXPECT_EQ(vectors[1].values[0], 1.0);

  server.stop();
  worker.join();
}

TEST(HttpBackend, AnthropicDialectSeparatesSystemPrompt) {
  const auto translator = make_translator("anthropic");
  auto r = request("hello");
  const auto wire = translator->chat(r, "model-x", "key");
  EXPECT_EQ(wire.path, "/messages");
  EXPECT_EQ(wire.body["system"], "system");
  EXPECT_EQ(wire.body["messages"][0]["content"], "hello");
  EXPECT_EQ(translator->parse_chat(json::parse(R"({"content":[{"type":"text","text":"hi"}]})")), "hi");
  EXPECT_THROW(make_translator("gopher"), ConfigError);
}

TEST(BackendConfig, ParseRejectsUnknownKind) {
  EXPECT_THROW(parse_backend_config(json{{"kind", "carrier-pigeon"}, {"model_id", "x"}}, "roles.judge"),
               ConfigError);
  const auto c = parse_backend_config(json{{"kind", "http"}, {"model_id", "x"}, {"endpoint", "http://h/v1"}}, "m");
  EXPECT_EQ(c.kind, BackendKind::kHttp);
  EXPECT_EQ(parse_backend_config(to_json(c), "m").endpoint, "http://h/v1");
}
