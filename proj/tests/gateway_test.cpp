#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "harmony/gateway.hpp"
#include "test_util.hpp"

using harmony::Errc;
using harmony::testing::error_code_of;
using harmony::testing::fixture;
using harmony::testing::read_file;
using harmony::testing::source_dir;
using harmony::testing::TempDir;
using nlohmann::json;
namespace cat = harmony::catalogue;
namespace gw = harmony::gateway;
namespace pl = harmony::pipeline;
using namespace std::chrono_literals;

namespace {

const cat::Actor kAlice{"alice", cat::Role::Publisher};
const cat::Actor kBoard{"board", cat::Role::Tmb};
const httplib::Headers kPub = {{"Authorization", "Bearer pub-token"}};
const httplib::Headers kTmb = {{"Authorization", "Bearer tmb-token"}};
const httplib::Headers kUser = {{"Authorization", "Bearer user-token"}};

json base_config(const TempDir& tmp) {
  return {{"port", 0},
          {"threads", 16},
          {"tokens", json::array({{{"token", "pub-token"}, {"userId", "alice"}, {"role", "publisher"}},
                                  {{"token", "tmb-token"}, {"userId", "board"}, {"role", "tmb"}},
                                  {{"token", "user-token"}, {"userId", "uma"}, {"role", "user"}}})},
          {"secrets", {{"upstream", "HARMONY_TEST_UPSTREAM_SECRET"}}},
          {"journalPath", (tmp / "journal.jsonl").string()},
          {"bindingsPath", (tmp / "bindings.json").string()},
          {"vocabDir", (source_dir() / "vocab").string()},
          {"mappingsDir", fixture("demo/mappings").string()},
          {"templatesDir", fixture("demo/templates").string()},
          {"pipelinesDir", fixture("demo/pipelines").string()}};
}

json detector_draft(std::optional<std::uint64_t> refresh = 60) {
  json d = {{"title", "Detector feed"},
            {"description", "JSON detector counts"},
            {"dataRequirement", "Road Traffic Measurements"},
            {"sourceType", "Real-time Feed"},
            {"caseStudy", "Rennes"},
            {"distributions", json::array({{{"id", "raw"}, {"format", "application/json"}, {"semanticsTag", "raw"},
                                            {"accessUrl", "https://data.example.org/detectors"}},
                                           {{"id", "harmonised-json"}, {"format", "application/json"},
                                            {"semanticsTag", "harmonised:harmonised_json"},
                                            {"accessUrl", "https://data.example.org/detectors/json"}},
                                           {{"id", "harmonised-csv"}, {"format", "text/csv"},
                                            {"semanticsTag", "harmonised:harmonised_csv"},
                                            {"accessUrl", "https://data.example.org/detectors/csv"}}})}};
  if (refresh) d["refreshPeriodSeconds"] = *refresh;
  return d;
}

std::string approved_record(gw::Gateway& g) {
  auto& c = g.catalogue();
  const auto id = c.create(kAlice, detector_draft()).id;
  c.transition(kAlice, id, cat::Action::Submit);
  c.transition(kBoard, id, cat::Action::Approve);
  return id;
}

json detector_binding(const std::string& id, std::uint64_t ttl = 0) {
  return {{"recordId", id},
          {"fetch", {{"kind", "file"}, {"path", fixture("demo/sources/detectors.json").string()},
                     {"mediaType", "application/json"}}},
          {"pipelineRef", "detectors_json"},
          {"prefixes", {{"tgt", "https://w3id.org/harmony/rcm#"}}},
          {"paramMap", {{"from", "tgt:observedAt"}, {"to", "tgt:observedAt"}}},
          {"cacheTtlSeconds", ttl}};
}

struct Server {
  explicit Server(const json& config) : gateway(gw::parse_config(config, source_dir())) {
    port = gateway.start();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10);
    return c;
  }
  gw::Gateway gateway;
  int port = 0;
};

}  // namespace

TEST(GatewayUnits, StatusMappingAndSseEscaping) {
  EXPECT_EQ(gw::http_status(Errc::Unauthorized), 401);
  EXPECT_EQ(gw::http_status(Errc::Forbidden), 403);
  EXPECT_EQ(gw::http_status(Errc::NotFound), 404);
  EXPECT_EQ(gw::http_status(Errc::UnknownDistribution), 404);
  EXPECT_EQ(gw::http_status(Errc::IllegalTransition), 409);
  EXPECT_EQ(gw::http_status(Errc::NotApproved), 409);
  EXPECT_EQ(gw::http_status(Errc::SchemaViolation), 422);
  EXPECT_EQ(gw::http_status(Errc::UpstreamUnavailable), 502);
  EXPECT_EQ(gw::http_status(Errc::PipelineError), 500);
  EXPECT_EQ(gw::sse_escape("a\nb\\n\r"), "a\\nb\\\\n\\r");
}

TEST(GatewayUnits, ConfigValidation) {
  TempDir tmp;
  auto c = base_config(tmp);
  EXPECT_NO_THROW(gw::parse_config(c, tmp.path()));
  c["tokens"].push_back({{"token", "pub-token"}, {"userId", "eve"}, {"role", "user"}});
  EXPECT_EQ(error_code_of([&] { gw::parse_config(c, tmp.path()); }), Errc::InvalidConfig);
  c = base_config(tmp);
  c["tokens"][0]["role"] = "admin";
  EXPECT_EQ(error_code_of([&] { gw::parse_config(c, tmp.path()); }), Errc::InvalidConfig);
  c = base_config(tmp);
  c.erase("vocabDir");
  EXPECT_EQ(error_code_of([&] { gw::parse_config(c, tmp.path()); }), Errc::InvalidConfig);
}

TEST(GatewayUnits, BindingStructure) {
  EXPECT_EQ(error_code_of([] { gw::parse_binding({{"recordId", "r"}}); }), Errc::SchemaViolation);
  EXPECT_EQ(error_code_of([] { gw::parse_binding({{"recordId", "r"}, {"fetch", {{"kind", "ftp"}}}}); }),
            Errc::SchemaViolation);
  EXPECT_EQ(error_code_of([] {
              gw::parse_binding({{"recordId", "r"},
                                 {"fetch", {{"kind", "inline"}, {"body", ""}}},
                                 {"paramMap", {{"from", "nope:x"}}}});
            }),
            Errc::SchemaViolation);
  const auto b = gw::parse_binding({{"recordId", "r"},
                                    {"fetch", {{"kind", "inline"}, {"body", "x"}}},
                                    {"paramMap", {{"to", "http://example.org/t"}}}});
  EXPECT_EQ(b.params.temporal, "http://example.org/t");
}

TEST(CatalogueApi, RecordsLifecycleOverHttp) {
  TempDir tmp;
  Server s(base_config(tmp));
  auto cli = s.client();

  auto res = cli.Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "ok");

  res = cli.Get("/catalogue/records");
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "[]");

  const auto body = detector_draft().dump();
  EXPECT_EQ(cli.Post("/catalogue/records", body, "application/json")->status, 401);
  EXPECT_EQ(cli.Post("/catalogue/records", kTmb, body, "application/json")->status, 403);
  auto missing = detector_draft();
  missing.erase("sourceType");
  res = cli.Post("/catalogue/records", kPub, missing.dump(), "application/json");
  EXPECT_EQ(res->status, 422);
  EXPECT_NE(res->body.find("sourceType"), std::string::npos);
  EXPECT_EQ(cli.Post("/catalogue/records", kPub, "{not json", "application/json")->status, 400);

  res = cli.Post("/catalogue/records", kPub, body, "application/json");
  ASSERT_EQ(res->status, 201);
  const auto rec = json::parse(res->body);
  const std::string id = rec["id"];
  EXPECT_EQ(rec["status"], "draft");
  const std::string path = "/catalogue/records/" + id;

  EXPECT_EQ(cli.Post(path + "/transition", kTmb, R"({"action":"approve"})", "application/json")->status, 409);
  EXPECT_EQ(cli.Post(path + "/transition", kPub, R"({"action":"submit"})", "application/json")->status, 200);
  EXPECT_EQ(cli.Post(path + "/transition", kPub, R"({"action":"approve"})", "application/json")->status, 403);
  EXPECT_EQ(cli.Post(path + "/transition", kTmb, R"({"action":"publish"})", "application/json")->status, 422);
  res = cli.Post(path + "/transition", kTmb, R"({"action":"approve"})", "application/json");
  EXPECT_EQ(json::parse(res->body)["status"], "approved");

  res = cli.Patch(path, kPub, R"({"title":"Detector feed v2"})", "application/json");
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["status"], "submitted");
  EXPECT_EQ(cli.Patch(path, kTmb, R"({"title":"x"})", "application/json")->status, 403);
  EXPECT_EQ(cli.Get("/catalogue/records/rec-404")->status, 404);

  res = cli.Get("/catalogue/records?status=submitted&caseStudy=Rennes&text=DETECTOR");
  EXPECT_EQ(json::parse(res->body).size(), 1u);
  EXPECT_EQ(json::parse(cli.Get("/catalogue/records?status=approved")->body).size(), 0u);
  EXPECT_EQ(cli.Get("/catalogue/records?status=published")->status, 422);

  res = cli.Get("/catalogue/vocabularies");
  EXPECT_EQ(json::parse(res->body)["statuses"].size(), 5u);

  res = cli.Get(path + "?format=ntriples");
  EXPECT_EQ(res->get_header_value("Content-Type"), "application/n-triples");
  EXPECT_EQ(res->body, harmony::rdf::serialize_ntriples(s.gateway.catalogue().export_rdf(id)));
  EXPECT_EQ(cli.Get(path + "?format=ntriples")->body, res->body);
  EXPECT_EQ(cli.Get("/catalogue/records?format=ntriples")->body, res->body);
}

TEST(CatalogueApi, NtriplesMatchesTheExportGolden) {
  TempDir tmp;
  const auto record = json::parse(read_file(fixture("catalogue/export_record.json")));
  const json ev = {{"ts", record["created"]}, {"actor", "alice"}, {"action", "create"},
                   {"recordId", record["id"]}, {"payload", record}};
  harmony::testing::write_file(tmp / "journal.jsonl", ev.dump() + "\n");
  Server s(base_config(tmp));
  auto res = s.client().Get("/catalogue/records/rec-000007?format=ntriples");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, read_file(fixture("catalogue/export_record.golden.nt")));
}

TEST(CatalogueApi, HarvestEndpoint) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  const auto nt = harmony::rdf::serialize_ntriples(s.gateway.catalogue().export_rdf(id));
  auto cli = s.client();
  EXPECT_EQ(cli.Post("/catalogue/harvest", kPub, nt, "application/n-triples")->status, 403);
  const auto res = cli.Post("/catalogue/harvest", kTmb, nt, "application/n-triples");
  ASSERT_EQ(res->status, 200);
  const auto report = json::parse(res->body);
  ASSERT_EQ(report["records"].size(), 1u);
  EXPECT_EQ(report["records"][0]["status"], "submitted");
}

TEST(Integrations, RegistrationRules) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  auto cli = s.client();
  EXPECT_EQ(cli.Post("/admin/integrations", kPub, detector_binding(id).dump(), "application/json")->status, 403);
  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, detector_binding("rec-999999").dump(), "application/json")->status,
            422);
  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, detector_binding(id, 61).dump(), "application/json")->status, 422);
  auto bad = detector_binding(id);
  bad["pipelineRef"] = "nope";
  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, bad.dump(), "application/json")->status, 422);
  bad = detector_binding(id);
  bad["fetch"]["authRef"] = "missing-secret";
  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, bad.dump(), "application/json")->status, 422);

  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, detector_binding(id).dump(), "application/json")->status, 200);
  EXPECT_EQ(cli.Post("/admin/integrations", kTmb, detector_binding(id).dump(), "application/json")->status, 200);
  const auto listed = json::parse(cli.Get("/admin/integrations", kTmb)->body);
  ASSERT_EQ(listed.size(), 1u);
  EXPECT_EQ(listed[0], detector_binding(id));
  EXPECT_EQ(cli.Get("/data/" + id, kUser)->status, 200);
}

TEST(Integrations, BindingsSurviveRestart) {
  TempDir tmp;
  std::string id;
  {
    Server s(base_config(tmp));
    id = approved_record(s.gateway);
    s.gateway.register_binding(kBoard, detector_binding(id));
  }
  Server again(base_config(tmp));
  ASSERT_TRUE(again.gateway.binding(id).has_value());
  EXPECT_EQ(again.client().Get("/data/" + id, kUser)->status, 200);
}

TEST(DataApi, RawAndHarmonisedDistributions) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  s.gateway.register_binding(kBoard, detector_binding(id));
  auto cli = s.client();

  EXPECT_EQ(cli.Get("/data/" + id)->status, 401);
  EXPECT_EQ(cli.Get("/data/" + id, {{"Authorization", "Bearer wrong"}})->status, 401);

  const auto raw_bytes = read_file(fixture("demo/sources/detectors.json"));
  auto res = cli.Get("/data/" + id, kUser);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, raw_bytes);
  EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");
  EXPECT_FALSE(res->has_header("X-Pipeline-Millis"));

  // Same bytes as running the pipeline directly (what the CLI does).
  const auto spec = fixture("demo/pipelines/detectors_json.json");
  const auto cli_out = *pl::load_pipeline(spec).run({{"detectors", raw_bytes}}).output;
  res = cli.Get("/data/" + id + "?distribution=harmonised-json", kUser);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, cli_out);
  ASSERT_TRUE(res->has_header("X-Pipeline-Millis"));
  EXPECT_GE(std::stod(res->get_header_value("X-Pipeline-Millis")), 0.0);

  res = cli.Get("/data/" + id + "?distribution=harmonised-csv", kUser);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "text/csv");
  EXPECT_EQ(res->body.substr(0, res->body.find('\n')), "recordType,id,observedAt,metric,value");

  EXPECT_EQ(cli.Get("/data/" + id + "?distribution=nope", kUser)->status, 404);
  EXPECT_EQ(cli.Get("/data/rec-999999", kUser)->status, 404);
  EXPECT_EQ(cli.Get("/data/" + id + "?distribution=harmonised-json&bbox=0,0,1,1", kUser)->status, 400);
  EXPECT_EQ(cli.Get("/data/" + id + "?distribution=harmonised-json&from=2024-03-02T00:00:00Z&to=2024-03-01T00:00:00Z",
                    kUser)->status,
            400);

  res = cli.Get("/data/" + id + "?distribution=harmonised-json&from=2024-03-01T10:00:00Z", kUser);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["detectors"].size(), 0u);
  res = cli.Get("/data/" + id + "?distribution=harmonised-json&to=2024-03-01T09:00:00Z", kUser);
  EXPECT_EQ(json::parse(res->body)["detectors"].size(), 3u);
}

TEST(DataApi, GovernanceGateAcrossStatuses) {
  TempDir tmp;
  Server s(base_config(tmp));
  auto& c = s.gateway.catalogue();
  const std::map<std::string, std::vector<std::pair<cat::Actor, cat::Action>>> paths = {
      {"draft", {}},
      {"submitted", {{kAlice, cat::Action::Submit}}},
      {"approved", {{kAlice, cat::Action::Submit}, {kBoard, cat::Action::Approve}}},
      {"rejected", {{kAlice, cat::Action::Submit}, {kBoard, cat::Action::Reject}}},
      {"deprecated", {{kAlice, cat::Action::Submit}, {kBoard, cat::Action::Approve}, {kBoard, cat::Action::Deprecate}}}};
  auto cli = s.client();
  for (const auto& [status, path] : paths) {
    const auto id = c.create(kAlice, detector_draft()).id;
    s.gateway.register_binding(kBoard, detector_binding(id));
    for (const auto& [who, action] : path) c.transition(who, id, action);
    ASSERT_EQ(c.get(id)->status, status);
    const int expected = status == "approved" ? 200 : 409;
    EXPECT_EQ(cli.Get("/data/" + id, kUser)->status, expected) << status;
    EXPECT_EQ(cli.Get("/data/" + id + "?distribution=harmonised-json", kUser)->status, expected) << status;
    if (status != "approved") EXPECT_EQ(cli.Get("/feeds/" + id, kUser)->status, 409) << status;
  }
}

TEST(DataApi, CachingAndUpstreamFailures) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  harmony::testing::write_file(tmp / "feed.json", read_file(fixture("demo/sources/detectors.json")));
  auto binding = detector_binding(id, 60);
  binding["fetch"]["path"] = (tmp / "feed.json").string();
  s.gateway.register_binding(kBoard, binding);

  const auto before = s.gateway.upstream_fetches();
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 12; ++i) {
    threads.emplace_back([&] {
      auto cli = s.client();
      ok += cli.Get("/data/" + id + "?distribution=harmonised-json", kUser)->status == 200;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 12);
  EXPECT_EQ(s.gateway.upstream_fetches() - before, 1u);
  EXPECT_EQ(s.client().Get("/data/" + id + "?distribution=harmonised-json", kUser)->get_header_value("X-Cache"), "hit");

  // A broken upstream is served from the last cached response, else 502.
  std::filesystem::remove(tmp / "feed.json");
  EXPECT_EQ(s.client().Get("/data/" + id + "?distribution=harmonised-json", kUser)->status, 200);
  EXPECT_EQ(s.client().Get("/data/" + id + "?distribution=harmonised-csv", kUser)->status, 502);
}

TEST(DataApi, HttpUpstreamWithSecret) {
  httplib::Server upstream;
  upstream.Get("/feed", [](const httplib::Request& req, httplib::Response& res) {
    if (req.get_header_value("Authorization") != "Bearer s3cret") {
      res.status = 403;
      return;
    }
    res.set_content(R"({"feed":{"measurements":[]}})", "application/json");
  });
  const int up_port = upstream.bind_to_any_port("127.0.0.1");
  std::thread up_thread([&] { upstream.listen_after_bind(); });
  upstream.wait_until_ready();

  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  json b = {{"recordId", id},
            {"fetch", {{"kind", "http"}, {"url", "http://127.0.0.1:" + std::to_string(up_port) + "/feed"},
                       {"authRef", "upstream"}}},
            {"pipelineRef", "detectors_json"}};
  s.gateway.register_binding(kBoard, b);
  auto cli = s.client();

  ::unsetenv("HARMONY_TEST_UPSTREAM_SECRET");
  EXPECT_EQ(cli.Get("/data/" + id, kUser)->status, 502);
  ::setenv("HARMONY_TEST_UPSTREAM_SECRET", "wrong", 1);
  EXPECT_EQ(cli.Get("/data/" + id, kUser)->status, 502);
  ::setenv("HARMONY_TEST_UPSTREAM_SECRET", "s3cret", 1);
  auto res = cli.Get("/data/" + id, kUser);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, R"({"feed":{"measurements":[]}})");
  EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");
  res = cli.Get("/data/" + id + "?distribution=harmonised-json", kUser);
  EXPECT_EQ(res->body, "{\"detectors\":[],\"stopDelays\":[]}\n");

  upstream.stop();
  up_thread.join();
  EXPECT_EQ(cli.Get("/data/" + id, kUser)->status, 502);
}

namespace {

// Reads SSE frames until `want` data events arrived.
std::vector<std::string> read_events(int port, const std::string& id, std::size_t want) {
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(10);
  std::string buffer;
  std::vector<std::string> events;
  c.Get("/feeds/" + id, kUser, [&](const char* data, std::size_t len) {
    buffer.append(data, len);
    std::size_t end;
    while ((end = buffer.find("\n\n")) != std::string::npos) {
      const auto frame = buffer.substr(0, end);
      buffer.erase(0, end + 2);
      if (frame.rfind("event: data\ndata: ", 0) == 0) events.push_back(frame.substr(18));
    }
    return events.size() < want;
  });
  return events;
}

void wait_for_subscribers(gw::Gateway& g, const std::string& id, std::size_t n) {
  for (int i = 0; i < 500 && g.subscriber_count(id) < n; ++i) std::this_thread::sleep_for(10ms);
  ASSERT_EQ(g.subscriber_count(id), n);
}

}  // namespace

TEST(Feeds, EverySubscriberGetsEveryMessageInOrder) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  s.gateway.publish(id, "nobody listens");

  std::vector<std::string> a, b;
  std::thread ta([&] { a = read_events(s.port, id, 3); });
  std::thread tb([&] { b = read_events(s.port, id, 3); });
  wait_for_subscribers(s.gateway, id, 2);
  s.gateway.publish(id, "one");
  s.gateway.publish(id, "two\nlines");
  s.gateway.publish(id, "three");
  ta.join();
  tb.join();
  const std::vector<std::string> expected = {"one", "two\\nlines", "three"};
  EXPECT_EQ(a, expected);
  EXPECT_EQ(b, expected);
}

TEST(Feeds, HarmonisedRunsArePublished) {
  TempDir tmp;
  Server s(base_config(tmp));
  const auto id = approved_record(s.gateway);
  s.gateway.register_binding(kBoard, detector_binding(id));
  std::vector<std::string> got;
  std::thread t([&] { got = read_events(s.port, id, 1); });
  wait_for_subscribers(s.gateway, id, 1);
  const auto res = s.client().Get("/data/" + id + "?distribution=harmonised-json", kUser);
  t.join();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0], gw::sse_escape(res->body));
}

TEST(Feeds, UnknownRecordIs404) {
  TempDir tmp;
  Server s(base_config(tmp));
  EXPECT_EQ(s.client().Get("/feeds/rec-999999", kUser)->status, 404);
  EXPECT_EQ(s.client().Get("/feeds/rec-999999")->status, 401);
}
