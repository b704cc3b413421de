#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <random>
#include <regex>
#include <set>
#include <thread>

#include "harmony/catalogue.hpp"
#include "test_util.hpp"

using harmony::Errc;
using harmony::testing::error_code_of;
using harmony::testing::fixture;
using harmony::testing::read_file;
using harmony::testing::source_dir;
using harmony::testing::TempDir;
using nlohmann::json;
namespace rdf = harmony::rdf;
using namespace harmony::catalogue;

namespace {

const Actor kAlice{"alice", Role::Publisher};
const Actor kBob{"bob", Role::Publisher};
const Actor kBoard{"board", Role::Tmb};
const Actor kUma{"uma", Role::User};

Vocabularies vocab() { return load_vocabularies(source_dir() / "vocab"); }

// Strictly increasing timestamps, one second apart.
Clock ticking_clock() {
  auto n = std::make_shared<int>(0);
  return [n] {
    const int s = (*n)++;
    char buf[40];
    std::snprintf(buf, sizeof buf, "2024-03-01T%02d:%02d:%02d.000000Z", s / 3600, (s / 60) % 60, s % 60);
    return std::string(buf);
  };
}

json minimal_draft() {
  return {{"title", "Detector counts"},
          {"description", "Loop detectors"},
          {"dataRequirement", "Road Traffic Measurements"},
          {"sourceType", "Real-time Feed"},
          {"caseStudy", "Rennes"}};
}

json seed() { return json::parse(read_file(fixture("catalogue/seed.json"))); }

std::vector<std::string> ids(const std::vector<Record>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs) out.push_back(r.id);
  return out;
}

// Legal path from draft to each status, with the owner as publisher.
std::vector<std::pair<Actor, Action>> path_to(const std::string& status) {
  if (status == "submitted") return {{kAlice, Action::Submit}};
  if (status == "approved") return {{kAlice, Action::Submit}, {kBoard, Action::Approve}};
  if (status == "rejected") return {{kAlice, Action::Submit}, {kBoard, Action::Reject}};
  if (status == "deprecated") return {{kAlice, Action::Submit}, {kBoard, Action::Approve}, {kBoard, Action::Deprecate}};
  return {};
}

}  // namespace

TEST(Vocabulary, MandatoryFieldsMatchTheProfileDocument) {
  const auto doc = read_file(source_dir() / "docs/metadata_profile.md");
  const auto start = doc.find("## Mandatory fields");
  const auto end = doc.find("## ", start + 3);
  ASSERT_NE(start, std::string::npos);
  const auto section = doc.substr(start, end - start);
  std::vector<std::string> from_doc;
  const std::regex row(R"(\n\|\s*`([A-Za-z]+)`\s*\|)");
  for (std::sregex_iterator it(section.begin(), section.end(), row), e; it != e; ++it) from_doc.push_back((*it)[1]);
  EXPECT_EQ(vocab().mandatory_fields, from_doc);
}

TEST(Vocabulary, RequirementsComeFromTheReferenceModelTable) {
  const auto v = vocab();
  for (const auto* term : {"Road Traffic Measurements", "Public Transport Schedules and Lines",
                           "Floating PT Vehicle Data", "Public Transport Delays", "unclassified"}) {
    EXPECT_TRUE(v.has_requirement(term)) << term;
  }
  EXPECT_EQ(v.statuses, (std::vector<std::string>{"draft", "submitted", "approved", "rejected", "deprecated"}));
}

TEST(Vocabulary, BrokenDirectoryIsRejected) {
  TempDir tmp;
  for (const auto* f : {"status.json", "data_requirements.json", "source_types.json", "mandatory_fields.json"}) {
    harmony::testing::write_file(tmp / f, read_file(source_dir() / "vocab" / f));
  }
  EXPECT_NO_THROW(load_vocabularies(tmp.path()));
  harmony::testing::write_file(tmp / "status.json", R"(["draft","submitted"])");
  EXPECT_EQ(error_code_of([&] { load_vocabularies(tmp.path()); }), Errc::InvalidConfig);
  EXPECT_EQ(error_code_of([] { load_vocabularies("/nonexistent"); }), Errc::Io);
}

TEST(Create, PublisherCreatesDraft) {
  Catalogue c(vocab(), {}, ticking_clock());
  const auto r = c.create(kAlice, minimal_draft());
  EXPECT_EQ(r.status, "draft");
  EXPECT_EQ(r.owner, "alice");
  EXPECT_EQ(r.created, r.modified);
  EXPECT_FALSE(r.id.empty());
  EXPECT_NE(c.create(kAlice, minimal_draft()).id, r.id);
  EXPECT_EQ(c.event_count(), 2u);
}

TEST(Create, RoleAndSchemaRules) {
  Catalogue c(vocab());
  EXPECT_EQ(error_code_of([&] { c.create(kBoard, minimal_draft()); }), Errc::Forbidden);
  EXPECT_EQ(error_code_of([&] { c.create(kUma, minimal_draft()); }), Errc::Forbidden);

  auto d = minimal_draft();
  d.erase("dataRequirement");
  d.erase("description");
  try {
    c.create(kAlice, d);
    FAIL();
  } catch (const harmony::Error& e) {
    EXPECT_EQ(e.code(), Errc::SchemaViolation);
    EXPECT_NE(std::string(e.what()).find("description, dataRequirement"), std::string::npos) << e.what();
  }

  d = minimal_draft();
  d["dataRequirement"] = "Parking";
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::UnknownVocabularyTerm);
  d = minimal_draft();
  d["status"] = "approved";
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::SchemaViolation);
  d = minimal_draft();
  d["kind"] = "dataService";
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::SchemaViolation);
  d["endpointUrl"] = "https://api.example.org/v1";
  EXPECT_NO_THROW(c.create(kAlice, d));

  d = minimal_draft();
  d["distributions"] = json::array({{{"format", "text/csv"}, {"accessUrl", "https://x.example/a"}},
                                    {{"format", "text/csv"}, {"accessUrl", "https://x.example/b"}}});
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::SchemaViolation);
  d["distributions"][1]["semanticsTag"] = "harmonised:csv";
  const auto ok = c.create(kAlice, d);
  ASSERT_EQ(ok.distributions.size(), 2u);
  EXPECT_EQ(ok.distributions[0].id, "d1");
  EXPECT_EQ(ok.distributions[1].id, "d2");
  d["distributions"][1]["semanticsTag"] = "cooked";
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::SchemaViolation);
  d["distributions"][1]["semanticsTag"] = "raw";
  d["distributions"][1]["accessUrl"] = "not a url";
  EXPECT_EQ(error_code_of([&] { c.create(kAlice, d); }), Errc::SchemaViolation);
}

TEST(Transition, TableRows) {
  Catalogue c(vocab(), {}, ticking_clock());
  const auto id = c.create(kAlice, minimal_draft()).id;
  EXPECT_EQ(error_code_of([&] { c.transition(kBoard, id, Action::Approve); }), Errc::IllegalTransition);
  EXPECT_EQ(error_code_of([&] { c.transition(kBob, id, Action::Submit); }), Errc::Forbidden);
  EXPECT_EQ(c.transition(kAlice, id, Action::Submit).status, "submitted");
  EXPECT_EQ(error_code_of([&] { c.transition(kAlice, id, Action::Approve); }), Errc::Forbidden);
  EXPECT_EQ(c.transition(kBoard, id, Action::Reject).status, "rejected");
  EXPECT_EQ(c.transition(kAlice, id, Action::Revise).status, "draft");
  EXPECT_EQ(error_code_of([&] { c.transition(kAlice, "rec-999999", Action::Submit); }), Errc::NotFound);
}

TEST(Transition, HappyPathAppendsThreeEventsAfterCreation) {
  Catalogue c(vocab(), {}, ticking_clock());
  const auto id = c.create(kAlice, minimal_draft()).id;
  const auto before = c.event_count();
  c.transition(kAlice, id, Action::Submit);
  c.transition(kBoard, id, Action::Approve);
  const auto r = c.transition(kBoard, id, Action::Deprecate);
  EXPECT_EQ(r.status, "deprecated");
  EXPECT_EQ(c.event_count() - before, 3u);
}

// Every (status, role, action) triple against a table written out here
// independently of the library's transition table.
TEST(Transition, FullCrossProductMatchesTable) {
  const std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>> table = {
      {{"draft", "submit"}, {"publisher", "submitted"}},
      {{"submitted", "approve"}, {"tmb", "approved"}},
      {{"submitted", "reject"}, {"tmb", "rejected"}},
      {{"rejected", "revise"}, {"publisher", "draft"}},
      {{"approved", "deprecate"}, {"tmb", "deprecated"}},
  };
  const std::vector<std::string> statuses = {"draft", "submitted", "approved", "rejected", "deprecated"};
  const std::vector<Actor> actors = {kAlice, kBoard, kUma};
  const std::vector<Action> actions = {Action::Submit, Action::Approve, Action::Reject, Action::Revise,
                                       Action::Deprecate};
  TempDir tmp;
  const auto journal = tmp / "journal.jsonl";
  Catalogue c(vocab(), journal, ticking_clock());
  int combos = 0;
  for (const auto& status : statuses) {
    for (const auto& actor : actors) {
      for (const auto action : actions) {
        ++combos;
        const auto id = c.create(kAlice, minimal_draft()).id;
        for (const auto& [who, a] : path_to(status)) c.transition(who, id, a);
        ASSERT_EQ(c.get(id)->status, status);
        const auto row = table.find({status, std::string(to_string(action))});
        const auto label = status + "/" + std::string(to_string(actor.role)) + "/" + std::string(to_string(action));
        if (row == table.end()) {
          EXPECT_EQ(error_code_of([&] { c.transition(actor, id, action); }), Errc::IllegalTransition) << label;
          EXPECT_EQ(c.get(id)->status, status) << label;
        } else if (row->second.first != to_string(actor.role)) {
          EXPECT_EQ(error_code_of([&] { c.transition(actor, id, action); }), Errc::Forbidden) << label;
          EXPECT_EQ(c.get(id)->status, status) << label;
        } else {
          EXPECT_EQ(c.transition(actor, id, action).status, row->second.second) << label;
        }
      }
    }
  }
  EXPECT_EQ(combos, 75);
  Catalogue replayed(vocab(), journal);
  EXPECT_EQ(replayed.state_json(), c.state_json());
  EXPECT_EQ(replayed.event_count(), c.event_count());
}

TEST(Update, OwnerEditsAndApprovedFallsBackToSubmitted) {
  Catalogue c(vocab(), {}, ticking_clock());
  const auto id = c.create(kAlice, minimal_draft()).id;
  EXPECT_EQ(error_code_of([&] { c.update(kBob, id, {{"title", "x"}}); }), Errc::Forbidden);
  EXPECT_EQ(c.update(kAlice, id, {{"title", "Renamed"}}).title, "Renamed");
  EXPECT_EQ(error_code_of([&] { c.update(kAlice, id, {{"title", ""}}); }), Errc::SchemaViolation);
  EXPECT_EQ(error_code_of([&] { c.update(kAlice, id, {{"id", "rec-1"}}); }), Errc::SchemaViolation);
  EXPECT_EQ(c.get(id)->title, "Renamed");
  c.transition(kAlice, id, Action::Submit);
  c.transition(kBoard, id, Action::Approve);
  const auto before = c.get(id)->modified;
  const auto r = c.update(kAlice, id, {{"description", "Edited after approval"}});
  EXPECT_EQ(r.status, "submitted");
  EXPECT_GT(r.modified, before);
  c.transition(kBoard, id, Action::Approve);
  c.transition(kBoard, id, Action::Deprecate);
  EXPECT_EQ(error_code_of([&] { c.update(kAlice, id, {{"title", "late"}}); }), Errc::IllegalTransition);
  EXPECT_EQ(error_code_of([&] { c.update(kAlice, "rec-404", {}); }), Errc::NotFound);
}

TEST(Search, SeedFixtureCounts) {
  Catalogue c(vocab(), {}, ticking_clock());
  const auto s = seed();
  apply_seed(c, s, kAlice, kBoard);
  EXPECT_EQ(c.search().size(), 12u);

  std::size_t expected = 0;
  for (const auto& e : s) expected += e["targetStatus"] == "approved" && e["record"]["caseStudy"] == "Rennes";
  EXPECT_EQ(expected, 3u);
  EXPECT_EQ(c.search({.status = "approved", .case_study = "Rennes"}).size(), expected);

  EXPECT_EQ(error_code_of([&] { c.search({.status = "published"}); }), Errc::UnknownVocabularyTerm);
  EXPECT_EQ(error_code_of([&] { c.search({.data_requirement = "Parking"}); }), Errc::UnknownVocabularyTerm);
  EXPECT_EQ(error_code_of([&] { c.search({.source_type = "Fax"}); }), Errc::UnknownVocabularyTerm);

  const auto weather = c.search({.text = "WEATHER"});
  EXPECT_EQ(weather.size(), 2u);
  EXPECT_EQ(c.search({.text = "flow and occupancy"}).size(), 1u);
  std::size_t athens_json = 0;
  for (const auto& e : s) {
    if (e["record"]["caseStudy"] != "Athens") continue;
    const auto& ds = e["record"]["distributions"];
    athens_json += std::any_of(ds.begin(), ds.end(), [](const json& d) { return d["format"] == "application/json"; });
  }
  EXPECT_EQ(c.search({.case_study = "Athens", .format = "application/json"}).size(), athens_json);
}

TEST(Search, OrderedByModifiedDescendingThenId) {
  Catalogue c(vocab(), {}, [] { return std::string("2024-03-01T00:00:00.000000Z"); });
  apply_seed(c, seed(), kAlice, kBoard);
  auto all = c.search();
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end(), [](const Record& a, const Record& b) { return a.id < b.id; }));

  Catalogue ticking(vocab(), {}, ticking_clock());
  apply_seed(ticking, seed(), kAlice, kBoard);
  all = ticking.search();
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GT(all[i - 1].modified, all[i].modified);
}

TEST(Search, FiltersAreMonotone) {
  Catalogue c(vocab(), {}, ticking_clock());
  apply_seed(c, seed(), kAlice, kBoard);
  const auto universe = ids(c.search());
  const std::set<std::string> all_ids(universe.begin(), universe.end());
  std::mt19937 rng(7);
  const std::vector<std::optional<std::string>> statuses = {std::nullopt, "approved", "draft", "submitted"};
  const std::vector<std::optional<std::string>> cities = {std::nullopt, "Rennes", "Lisbon", "Athens"};
  const std::vector<std::optional<std::string>> texts = {std::nullopt, "bus", "traffic", "e"};
  const std::vector<std::optional<std::string>> formats = {std::nullopt, "text/csv", "application/json"};
  for (int i = 0; i < 200; ++i) {
    SearchFilters f;
    f.status = statuses[rng() % statuses.size()];
    f.case_study = cities[rng() % cities.size()];
    f.text = texts[rng() % texts.size()];
    f.format = formats[rng() % formats.size()];
    const auto base = ids(c.search(f));
    for (const auto& id : base) EXPECT_TRUE(all_ids.count(id));
    SearchFilters narrower = f;
    narrower.source_type = "Real-time Feed";
    const auto sub = ids(c.search(narrower));
    const std::set<std::string> base_set(base.begin(), base.end());
    for (const auto& id : sub) EXPECT_TRUE(base_set.count(id)) << id;
  }
}

TEST(Export, GoldenRecordMatchesOracle) {
  TempDir tmp;
  const auto record = json::parse(read_file(fixture("catalogue/export_record.json")));
  const json ev = {{"ts", record["created"]}, {"actor", "alice"}, {"action", "create"},
                   {"recordId", record["id"]}, {"payload", record}};
  harmony::testing::write_file(tmp / "journal.jsonl", ev.dump() + "\n");
  Catalogue c(vocab(), tmp / "journal.jsonl");
  const auto g = c.export_rdf(std::string("rec-000007"));
  EXPECT_EQ(rdf::serialize_ntriples(g), read_file(fixture("catalogue/export_record.golden.nt")));
  EXPECT_EQ(rdf::serialize_ntriples(c.export_rdf()), rdf::serialize_ntriples(g));

  std::size_t dist_links = 0;
  for (const auto& t : g) dist_links += t.predicate.value() == std::string(ns::kDcat) + "distribution";
  EXPECT_EQ(dist_links, 2u);
}

TEST(Export, EmptyAndMissing) {
  Catalogue c(vocab());
  EXPECT_TRUE(c.export_rdf().empty());
  EXPECT_EQ(error_code_of([&] { c.export_rdf(std::string("rec-000001")); }), Errc::NotFound);
}

TEST(Harvest, RoundTripOfFiveRecords) {
  Catalogue source(vocab(), {}, ticking_clock());
  auto s = seed();
  s.erase(s.begin() + 5, s.end());
  const auto originals = apply_seed(source, s, kAlice, kBoard);
  const auto g = rdf::parse_ntriples(rdf::serialize_ntriples(source.export_rdf()));

  Catalogue target(vocab(), {}, ticking_clock());
  EXPECT_EQ(error_code_of([&] { target.harvest_import(g, kAlice); }), Errc::Forbidden);
  const auto report = target.harvest_import(g, kBoard);
  ASSERT_EQ(report.records.size(), 5u);
  EXPECT_TRUE(report.warnings.empty());
  for (const auto& r : report.records) {
    EXPECT_EQ(r.status, "submitted");
    EXPECT_EQ(r.owner, "board");
    const auto orig = std::find_if(originals.begin(), originals.end(), [&](const Record& o) { return o.title == r.title; });
    ASSERT_NE(orig, originals.end());
    EXPECT_EQ(r.kind, orig->kind);
    EXPECT_EQ(r.description, orig->description);
    EXPECT_EQ(r.publisher_org, orig->publisher_org);
    EXPECT_EQ(r.case_study, orig->case_study);
    EXPECT_EQ(r.data_requirement, orig->data_requirement);
    EXPECT_EQ(r.source_type, orig->source_type);
    EXPECT_EQ(r.refresh_period_seconds, orig->refresh_period_seconds);
    auto a = r.distributions, b = orig->distributions;
    auto by_id = [](const Distribution& x, const Distribution& y) { return x.id < y.id; };
    std::sort(a.begin(), a.end(), by_id);
    std::sort(b.begin(), b.end(), by_id);
    EXPECT_EQ(a, b);
  }
  EXPECT_TRUE(target.harvest_import(rdf::Graph{}, kBoard).records.empty());
}

TEST(Harvest, MissingTitleAndUnknownTerms) {
  const std::string dcat = std::string(ns::kDcat);
  const std::string cat = std::string(ns::kCat);
  rdf::Graph g;
  const auto a = rdf::Term::iri("https://portal.example/ds/a");
  const auto b = rdf::Term::iri("https://portal.example/ds/b");
  g.insert(a, rdf::Term::iri(rdf::kRdfType), rdf::Term::iri(dcat + "Dataset"));
  g.insert(b, rdf::Term::iri(rdf::kRdfType), rdf::Term::iri(dcat + "Dataset"));
  g.insert(b, rdf::Term::iri(std::string(ns::kDcterms) + "title"), rdf::Term::literal("Parking"));
  g.insert(b, rdf::Term::iri(cat + "dataRequirement"), rdf::Term::literal("Parking Occupancy"));
  Catalogue c(vocab());
  const auto report = c.harvest_import(g, kBoard);
  ASSERT_EQ(report.records.size(), 1u);
  EXPECT_EQ(report.records[0].data_requirement, "unclassified");
  EXPECT_EQ(report.records[0].source_type, "unclassified");
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings[0].find("https://portal.example/ds/a"), std::string::npos);
  EXPECT_NE(report.warnings[0].find("title"), std::string::npos);
}

TEST(Journal, ReplayReconstructsState) {
  TempDir tmp;
  const auto journal = tmp / "journal.jsonl";
  Catalogue c(vocab(), journal, ticking_clock());
  const auto seeded = apply_seed(c, seed(), kAlice, kBoard);
  c.update(kAlice, seeded[0].id, {{"title", "Detector counts v2"}});
  c.harvest_import(c.export_rdf(seeded[1].id), kBoard);

  Catalogue replayed(vocab(), journal);
  EXPECT_EQ(replayed.state_json(), c.state_json());

  const auto lines = read_file(journal);
  EXPECT_EQ(static_cast<std::size_t>(std::count(lines.begin(), lines.end(), '\n')), c.event_count());
  const auto first = json::parse(lines.substr(0, lines.find('\n')));
  for (const auto* k : {"ts", "actor", "action", "recordId", "payload"}) EXPECT_TRUE(first.contains(k)) << k;

  // New ids continue after the replayed ones.
  const auto next = replayed.create(kAlice, minimal_draft());
  EXPECT_FALSE(c.get(next.id).has_value());
}

TEST(Journal, TornFinalLineIsIgnoredButCorruptionIsNot) {
  TempDir tmp;
  const auto journal = tmp / "journal.jsonl";
  {
    Catalogue c(vocab(), journal, ticking_clock());
    c.create(kAlice, minimal_draft());
  }
  const auto good = read_file(journal);
  harmony::testing::write_file(journal, good + R"({"ts":"2024)");
  EXPECT_EQ(Catalogue(vocab(), journal).size(), 1u);
  harmony::testing::write_file(journal, "garbage\n" + good);
  EXPECT_EQ(error_code_of([&] { Catalogue(vocab(), journal); }), Errc::Io);
}

TEST(Journal, SnapshotPlusTail) {
  TempDir tmp;
  const auto journal = tmp / "journal.jsonl";
  const auto snap = tmp / "snapshot.json";
  Catalogue c(vocab(), journal, ticking_clock());
  const auto seeded = apply_seed(c, seed(), kAlice, kBoard);
  c.write_snapshot(snap);
  c.transition(kAlice, seeded[6].id, Action::Submit);
  auto reopened = Catalogue::open(vocab(), journal, snap);
  EXPECT_EQ(reopened->state_json(), c.state_json());
  EXPECT_EQ(reopened->event_count(), c.event_count());
  const auto r = reopened->create(kAlice, minimal_draft());
  EXPECT_FALSE(c.get(r.id).has_value());
  EXPECT_EQ(Catalogue(vocab(), journal).state_json(), reopened->state_json());
}

TEST(Concurrency, ParallelWritersGetDistinctIds) {
  TempDir tmp;
  const auto journal = tmp / "journal.jsonl";
  Catalogue c(vocab(), journal);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 25; ++i) {
        const auto id = c.create(kAlice, minimal_draft()).id;
        c.transition(kAlice, id, Action::Submit);
        (void)c.search({.status = "submitted"});
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(c.size(), 200u);
  EXPECT_EQ(c.search({.status = "submitted"}).size(), 200u);
  EXPECT_EQ(Catalogue(vocab(), journal).state_json(), c.state_json());
}
