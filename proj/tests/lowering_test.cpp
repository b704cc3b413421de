#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "harmony/csv.hpp"
#include "harmony/lowering.hpp"
#include "harmony/mapping.hpp"
#include "test_util.hpp"

using harmony::Errc;
using harmony::testing::error_code_of;
using harmony::testing::fixture;
using harmony::testing::read_file;
namespace rdf = harmony::rdf;
namespace lower = harmony::lower;
namespace lift = harmony::lift;
namespace csv = harmony::csv;

namespace {

const std::string kEx = "http://example.org/";
const std::string kTgt = "https://w3id.org/harmony/rcm#";

rdf::Term ex(const std::string& l) { return rdf::Term::iri(kEx + l); }
rdf::Term tgt(const std::string& l) { return rdf::Term::iri(kTgt + l); }

const std::string kHeader =
    "{% output json %}\n{% prefix tgt: <https://w3id.org/harmony/rcm#> %}\n"
    "{% query q: ?d a tgt:TrafficDetector . ?d tgt:identifier ?id . ?d tgt:flow ?flow order by ?id %}\n";

rdf::Graph detectors(const std::vector<std::pair<std::string, std::string>>& rows) {
  rdf::Graph g;
  for (const auto& [id, flow] : rows) {
    g.insert(ex("det/" + id), rdf::Term::iri(rdf::kRdfType), tgt("TrafficDetector"));
    g.insert(ex("det/" + id), tgt("identifier"), rdf::Term::literal(id));
    g.insert(ex("det/" + id), tgt("flow"), rdf::Term::literal(flow, rdf::kXsdInteger));
  }
  return g;
}

std::string render_text(const std::string& tpl, const rdf::Graph& g) {
  return lower::render(lower::parse_template(tpl), g);
}

}  // namespace

TEST(ParseTemplate, LiteralOnlyBody) {
  const auto t = lower::parse_template("{% output csv %}\na,b\n1,2\n");
  EXPECT_EQ(t.format, lower::OutputFormat::Csv);
  ASSERT_EQ(t.body.size(), 1u);
  EXPECT_EQ(std::get<lower::TextNode>(t.body[0]).text, "a,b\n1,2\n");
}

TEST(ParseTemplate, InterpolationOutsideLoop) {
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output json %}\n${f}"); }), Errc::UnboundTemplateVariable);
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output json %}\n${d.f}"); }),
            Errc::UnboundTemplateVariable);
  EXPECT_EQ(error_code_of([] { lower::parse_template(kHeader + "{% for d in q %}${d.nope}{% end %}"); }),
            Errc::UnboundTemplateVariable);
}

TEST(ParseTemplate, DetectorJsonFixtureShape) {
  const auto t = lower::parse_template(read_file(fixture("detector/detector_json.lot")));
  const auto s = lower::stats(t);
  EXPECT_EQ(s.queries, 1u);
  EXPECT_EQ(s.for_blocks, 1u);
  EXPECT_EQ(s.interpolations, 3u);
}

TEST(ParseTemplate, Errors) {
  EXPECT_EQ(error_code_of([] { lower::parse_template("[]"); }), Errc::TemplateSyntaxError);
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output xml %}"); }), Errc::TemplateSyntaxError);
  EXPECT_EQ(error_code_of([] { lower::parse_template(kHeader + "{% for d in nope %}{% end %}"); }),
            Errc::UnknownQuery);
  EXPECT_EQ(error_code_of([] { lower::parse_template(kHeader + "{% for d in q %}"); }), Errc::TemplateSyntaxError);
  EXPECT_EQ(error_code_of([] { lower::parse_template(kHeader + "{% end %}"); }), Errc::TemplateSyntaxError);
  EXPECT_EQ(error_code_of([] { lower::parse_template(kHeader + "x{% query r: ?a ?b ?c %}"); }),
            Errc::TemplateSyntaxError);
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output json %}\n{% query r: ?a nope:p ?c %}"); }),
            Errc::UnknownPrefix);
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output json %}\n{% query r: ?a ?b ?c order by ?z %}"); }),
            Errc::UnboundVariable);
  EXPECT_EQ(error_code_of([] { lower::parse_template("{% output json %}\n{% bogus %}"); }),
            Errc::TemplateSyntaxError);
}

TEST(ParseTemplate, ErrorsCarryPositions) {
  try {
    lower::parse_template("{% output json %}\nabc\n  {% for d in %}{% end %}");
    FAIL() << "expected an error";
  } catch (const harmony::Error& e) {
    EXPECT_EQ(e.code(), Errc::TemplateSyntaxError);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ParseTemplate, QueryFiltersAndConstants) {
  const auto t = lower::parse_template(
      "{% output json %}\n{% prefix tgt: <https://w3id.org/harmony/rcm#> %}\n"
      "{% query q: ?d tgt:flow ?f . ?d tgt:site \"north\" filter ?f >= 8 filter ?f != \"x\" order by ?f %}\n");
  const auto& q = t.queries.at(0).query;
  ASSERT_EQ(q.patterns.size(), 2u);
  EXPECT_EQ(std::get<rdf::Term>(q.patterns[1].object), rdf::Term::literal("north"));
  ASSERT_EQ(q.filters.size(), 2u);
  EXPECT_EQ(q.filters[0].op, rdf::CompareOp::Ge);
  EXPECT_EQ(q.filters[1].op, rdf::CompareOp::Ne);
  EXPECT_EQ(q.order_by, "f");
}

TEST(Render, EmptyGraphZeroIterations) {
  const auto tpl = kHeader + R"([{% for d in q sep "," %}{"id":"${d.id}"}{% end %}])";
  EXPECT_EQ(render_text(tpl, {}), "[]");
}

TEST(Render, DetectorsMatchManualOracle) {
  const auto tpl = kHeader + R"([{% for d in q sep "," %}{"id":"${d.id}","flow":$!{d.flow}}{% end %}])";
  const std::vector<std::pair<std::string, std::string>> rows{{"B", "7"}, {"A", "10"}};
  // Oracle: sort rows by id, substitute into the loop body, join with ",".
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  std::string expected = "[";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) expected += ",";
    expected += "{\"id\":\"" + sorted[i].first + "\",\"flow\":" + sorted[i].second + "}";
  }
  expected += "]";
  EXPECT_EQ(expected, R"([{"id":"A","flow":10},{"id":"B","flow":7}])");
  EXPECT_EQ(render_text(tpl, detectors(rows)), expected);
}

TEST(Render, JsonEscaping) {
  const auto tpl = kHeader + R"({% for d in q %}"${d.id}"{% end %})";
  EXPECT_EQ(render_text(tpl, detectors({{"say \"hi\"", "1"}})), R"("say \"hi\"")");
  EXPECT_EQ(render_text(tpl, detectors({{"a\\b\nc\x01", "1"}})), "\"a\\\\b\\nc\\u0001\"");
}

TEST(Render, RawFallsBackToStringForNonNumbers) {
  rdf::Graph g = detectors({{"A", "10"}});
  g.insert(ex("det/B"), rdf::Term::iri(rdf::kRdfType), tgt("TrafficDetector"));
  g.insert(ex("det/B"), tgt("identifier"), rdf::Term::literal("B"));
  g.insert(ex("det/B"), tgt("flow"), rdf::Term::literal("n/a", rdf::kXsdInteger));
  const auto tpl = kHeader + R"([{% for d in q sep "," %}$!{d.flow}{% end %}])";
  EXPECT_EQ(render_text(tpl, g), R"([10,"n/a"])");
}

TEST(Render, CsvQuoting) {
  const auto tpl =
      "{% output csv %}\n{% prefix tgt: <https://w3id.org/harmony/rcm#> %}\n"
      "{% query q: ?d tgt:identifier ?id . ?d tgt:flow ?flow order by ?id %}\n"
      "id,flow\n{% for d in q %}${d.id},${d.flow}\n{% end %}";
  const auto out = render_text(tpl, detectors({{"a,b", "1"}, {"q\"x", "2"}}));
  EXPECT_EQ(out, "id,flow\n\"a,b\",1\n\"q\"\"x\",2\n");
  for (const auto& row : csv::parse(out)) EXPECT_EQ(row.size(), 2u);
}

TEST(Render, NestedLoopsShareVariables) {
  rdf::Graph g;
  g.insert(ex("s1"), tgt("name"), rdf::Term::literal("S1"));
  g.insert(ex("s2"), tgt("name"), rdf::Term::literal("S2"));
  g.insert(ex("v1"), tgt("at"), ex("s1"));
  g.insert(ex("v2"), tgt("at"), ex("s1"));
  g.insert(ex("v3"), tgt("at"), ex("s2"));
  const auto tpl =
      "{% output json %}\n{% prefix tgt: <https://w3id.org/harmony/rcm#> %}\n"
      "{% query stops: ?s tgt:name ?n order by ?n %}\n{% query visits: ?v tgt:at ?s order by ?v %}\n"
      R"({% for s in stops sep ";" %}${s.n}:{% for v in visits sep "," %}${v.v}{% end %}{% end %})";
  EXPECT_EQ(render_text(tpl, g), "S1:http://example.org/v1,http://example.org/v2;S2:http://example.org/v3");
}

TEST(Render, TrailingNewlineAfterDirectiveDropped) {
  const auto tpl = kHeader + "[\n{% for d in q sep \",\" %}\n${d.id}\n{% end %}\n]";
  EXPECT_EQ(render_text(tpl, detectors({{"A", "1"}, {"B", "2"}})), "[\nA\n,B\n]");
}

TEST(Render, DeterministicAcrossInsertionOrders) {
  const auto tpl = lower::parse_template(read_file(fixture("demo/templates/harmonised_json.lot")));
  std::vector<std::pair<std::string, std::string>> rows;
  for (int i = 0; i < 20; ++i) rows.emplace_back("D" + std::to_string(i), std::to_string(i * 3 % 7));
  std::vector<rdf::Triple> triples;
  for (const auto& t : detectors(rows)) triples.push_back(t);
  for (const auto& [id, _] : rows) {
    triples.emplace_back(ex("det/" + id), tgt("observedAt"), rdf::Term::literal("2024-03-01T09:00:00Z"));
  }
  std::string first;
  std::mt19937 rng(11);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(triples.begin(), triples.end(), rng);
    rdf::Graph g;
    for (const auto& t : triples) g.insert(t);
    const auto out = lower::render(tpl, g);
    if (k == 0) first = out;
    EXPECT_EQ(out, first);
  }
  EXPECT_TRUE(nlohmann::json::accept(first));
}

TEST(Render, DemoOutputsParse) {
  const auto dir = fixture("demo");
  auto g = lift::lift(lift::parse_mapping(read_file(dir / "mappings/detectors_csv.json")),
                      {{"detectors", read_file(dir / "sources/detectors.csv")}});
  g.insert_all(lift::lift(lift::parse_mapping(read_file(dir / "mappings/stop_delays_xml.json")),
                          {{"stop_delays", read_file(dir / "sources/stop_delays.xml")}}));
  const auto json_out = lower::render(lower::parse_template(read_file(dir / "templates/harmonised_json.lot")), g);
  const auto doc = nlohmann::json::parse(json_out);
  EXPECT_EQ(doc["detectors"].size(), 3u);
  EXPECT_EQ(doc["stopDelays"].size(), 2u);
  EXPECT_EQ(doc["stopDelays"][1]["name"], "Sainte-Anne \"Nord\"");
  const auto csv_out = lower::render(lower::parse_template(read_file(dir / "templates/harmonised_csv.lot")), g);
  const auto rows = csv::parse(csv_out);
  EXPECT_EQ(rows.size(), 6u);
  for (const auto& r : rows) EXPECT_EQ(r.size(), 5u);
}

TEST(RoundTrip, MirrorPairsReproduceGraphs) {
  const auto demo = fixture("demo");
  const auto mirror = fixture("demo_mirror");
  struct Case {
    std::string mapping, source_name, source, mirror_template, mirror_mapping;
  };
  const std::vector<Case> cases{
      {"mappings/detectors_csv.json", "detectors", "sources/detectors.csv", "detectors_csv.lot",
       (demo / "mappings/detectors_csv.json").string()},
      {"mappings/detectors_json.json", "detectors", "sources/detectors.json", "detectors_json.lot",
       (mirror / "detectors_json_mirror.json").string()},
      {"mappings/stop_delays_xml.json", "stop_delays", "sources/stop_delays.xml", "stop_delays.lot",
       (mirror / "stop_delays_mirror.json").string()},
  };
  for (const auto& c : cases) {
    const auto original = lift::lift(lift::parse_mapping(read_file(demo / c.mapping)),
                                     {{c.source_name, read_file(demo / c.source)}});
    const auto lowered = lower::render(lower::parse_template(read_file(mirror / c.mirror_template)), original);
    const auto again = lift::lift(lift::parse_mapping(read_file(c.mirror_mapping)), {{c.source_name, lowered}});
    EXPECT_EQ(rdf::serialize_ntriples(again), rdf::serialize_ntriples(original)) << c.mapping;
  }
}
