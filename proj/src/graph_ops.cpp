#include "harmony/graph_ops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace harmony::ops {

namespace {

using nlohmann::json;

// Key literals of every instance of `cls`, keyed by lexical form.
std::map<std::string, std::vector<rdf::Term>> key_index(const rdf::Graph& g, const std::string& cls,
                                                        const std::string& key_prop) {
  std::map<std::string, std::vector<rdf::Term>> index;
  const auto key = rdf::Term::iri(key_prop);
  for (const auto& node : g.instances_of(rdf::Term::iri(cls))) {
    for (const auto& v : g.objects(node, key)) {
      if (v.is_literal()) index[v.value()].push_back(node);
    }
  }
  return index;
}

bool read_digits(std::string_view s, std::size_t& pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  out = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    out = out * 10 + (c - '0');
  }
  pos += n;
  return true;
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos < s.size() && s[pos] == c) {
    ++pos;
    return true;
  }
  return false;
}

std::vector<rdf::Term> subjects_with(const rdf::Graph& g, const rdf::Term& predicate) {
  std::set<rdf::Term> out;
  for (const auto& t : g) {
    if (t.predicate == predicate) out.insert(t.subject);
  }
  return {out.begin(), out.end()};
}

rdf::Graph describe_all(const rdf::Graph& g, const std::vector<rdf::Term>& nodes) {
  rdf::Graph out;
  for (const auto& n : nodes) {
    for (const auto& t : g.describe(n)) out.insert(t);
  }
  return out;
}

[[noreturn]] void shape_error(const std::string& msg) { throw Error(Errc::ShapeSyntaxError, msg); }

}  // namespace

rdf::Graph union_of(const rdf::Graph& a, const rdf::Graph& b) {
  rdf::Graph out = a;
  out.insert_all(b);
  return out;
}

rdf::Graph fuse(const rdf::Graph& g1, const rdf::Graph& g2, const LinkSpec& spec) {
  const auto a_keys = key_index(g1, spec.class_a, spec.key_prop_a);
  const auto b_keys = key_index(g2, spec.class_b, spec.key_prop_b);

  std::map<rdf::Term, std::set<rdf::Term>> targets;
  for (const auto& [key, b_nodes] : b_keys) {
    auto hit = a_keys.find(key);
    if (hit == a_keys.end()) continue;
    std::set<rdf::Term> distinct(hit->second.begin(), hit->second.end());
    if (distinct.size() > 1) {
      throw Error(Errc::AmbiguousKey, "key '" + key + "' names " + std::to_string(distinct.size()) + " nodes of <" +
                                          spec.class_a + ">");
    }
    for (const auto& b : b_nodes) targets[b].insert(*distinct.begin());
  }
  std::map<rdf::Term, rdf::Term> rewrite;
  for (const auto& [b, as] : targets) {
    if (as.size() > 1) {
      throw Error(Errc::AmbiguousKey, "<" + b.value() + "> carries keys of " + std::to_string(as.size()) +
                                          " different nodes of <" + spec.class_a + ">");
    }
    rewrite.emplace(b, *as.begin());
  }

  auto map_term = [&](const rdf::Term& t) -> const rdf::Term& {
    if (!t.is_iri()) return t;
    auto it = rewrite.find(t);
    return it == rewrite.end() ? t : it->second;
  };
  rdf::Graph out = g1;
  for (const auto& t : g2) out.insert(map_term(t.subject), t.predicate, map_term(t.object));
  return out;
}

std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::MinCount: return "MinCount";
    case ConstraintKind::MaxCount: return "MaxCount";
    case ConstraintKind::Datatype: return "Datatype";
    case ConstraintKind::NodeKind: return "NodeKind";
  }
  return "Unknown";
}

ValidationReport validate(const rdf::Graph& g, const std::vector<Shape>& shapes) {
  ValidationReport report;
  for (const auto& shape : shapes) {
    for (const auto& node : g.instances_of(rdf::Term::iri(shape.target_class))) {
      for (const auto& c : shape.constraints) {
        const auto values = g.objects(node, rdf::Term::iri(c.predicate));
        auto add = [&](ConstraintKind kind, std::string message) {
          report.violations.push_back({node, c.predicate, kind, std::move(message)});
        };
        if (values.size() < c.min_count) {
          add(ConstraintKind::MinCount, "expected at least " + std::to_string(c.min_count) + " value(s), found " +
                                            std::to_string(values.size()));
        }
        if (c.max_count && values.size() > *c.max_count) {
          add(ConstraintKind::MaxCount, "expected at most " + std::to_string(*c.max_count) + " value(s), found " +
                                            std::to_string(values.size()));
        }
        for (const auto& v : values) {
          if (c.datatype && (!v.is_literal() || v.datatype() != *c.datatype)) {
            add(ConstraintKind::Datatype, "value " + v.to_ntriples() + " is not of datatype <" + *c.datatype + ">");
          }
          if (c.node_kind) {
            const bool ok = *c.node_kind == NodeKind::Iri ? v.is_iri() : v.is_literal();
            if (!ok) {
              add(ConstraintKind::NodeKind, "value " + v.to_ntriples() + " is not " +
                                                (*c.node_kind == NodeKind::Iri ? "an IRI" : "a literal"));
            }
          }
        }
      }
    }
  }
  std::sort(report.violations.begin(), report.violations.end());
  report.violations.erase(std::unique(report.violations.begin(), report.violations.end()), report.violations.end());
  report.conforms = report.violations.empty();
  return report;
}

std::vector<Shape> parse_shapes(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    shape_error(e.what());
  }
  auto prefixes = rdf::PrefixMap::with_defaults();
  const json* list = &doc;
  if (doc.is_object()) {
    if (auto it = doc.find("prefixes"); it != doc.end()) {
      if (!it->is_object()) shape_error("prefixes must be an object");
      for (const auto& [k, v] : it->items()) {
        if (!v.is_string()) shape_error("prefix '" + k + "' must map to a string");
        prefixes.bind(k, v.get<std::string>());
      }
    }
    auto it = doc.find("shapes");
    if (it == doc.end()) shape_error("missing 'shapes'");
    list = &*it;
  }
  if (!list->is_array()) shape_error("shapes must be a list");

  auto str = [&](const json& j, const char* key, const std::string& where) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) shape_error(where + ": '" + key + "' must be a string");
    return it->get<std::string>();
  };
  auto count = [&](const json& j, const char* key, const std::string& where) -> std::optional<std::size_t> {
    auto it = j.find(key);
    if (it == j.end()) return std::nullopt;
    if (!it->is_number_unsigned()) shape_error(where + ": '" + key + "' must be a non-negative integer");
    return it->get<std::size_t>();
  };

  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const auto& s = (*list)[i];
    const auto where = "shape " + std::to_string(i);
    if (!s.is_object()) shape_error(where + " must be an object");
    Shape shape;
    shape.target_class = prefixes.expand(str(s, "targetClass", where));
    auto cs = s.find("constraints");
    if (cs != s.end()) {
      if (!cs->is_array()) shape_error(where + ": constraints must be a list");
      for (const auto& cj : *cs) {
        if (!cj.is_object()) shape_error(where + ": constraint must be an object");
        Constraint c;
        c.predicate = prefixes.expand(str(cj, "predicate", where));
        c.min_count = count(cj, "minCount", where).value_or(0);
        c.max_count = count(cj, "maxCount", where);
        if (c.max_count && c.min_count > *c.max_count) shape_error(where + ": minCount exceeds maxCount");
        if (cj.contains("datatype")) c.datatype = prefixes.expand(str(cj, "datatype", where));
        if (cj.contains("nodeKind")) {
          const auto k = str(cj, "nodeKind", where);
          if (k == "iri") c.node_kind = NodeKind::Iri;
          else if (k == "literal") c.node_kind = NodeKind::Literal;
          else shape_error(where + ": nodeKind must be 'iri' or 'literal'");
        }
        shape.constraints.push_back(std::move(c));
      }
    }
    shapes.push_back(std::move(shape));
  }
  return shapes;
}

std::string report_to_json(const ValidationReport& report) {
  json out = {{"conforms", report.conforms}, {"violations", json::array()}};
  for (const auto& v : report.violations) {
    out["violations"].push_back({{"focusNode", v.focus_node.value()},
                                 {"predicate", v.predicate},
                                 {"constraintKind", std::string(to_string(v.kind))},
                                 {"message", v.message}});
  }
  return out.dump(2);
}

std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  std::size_t pos = 0;
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  if (!read_digits(s, pos, 4, year) || !expect(s, pos, '-') || !read_digits(s, pos, 2, month) ||
      !expect(s, pos, '-') || !read_digits(s, pos, 2, day)) {
    return std::nullopt;
  }
  std::int64_t micros = 0;
  std::int64_t offset_minutes = 0;
  if (pos < s.size()) {
    if (!expect(s, pos, 'T') && !expect(s, pos, ' ')) return std::nullopt;
    if (!read_digits(s, pos, 2, hour) || !expect(s, pos, ':') || !read_digits(s, pos, 2, minute)) return std::nullopt;
    if (expect(s, pos, ':')) {
      if (!read_digits(s, pos, 2, second)) return std::nullopt;
      if (expect(s, pos, '.')) {
        std::int64_t scale = 100000;
        const auto start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
          micros += (s[pos] - '0') * scale;
          scale /= 10;
          ++pos;
        }
        if (pos == start) return std::nullopt;
      }
    }
    if (expect(s, pos, 'Z')) {
      // UTC
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
      const int sign = s[pos] == '-' ? -1 : 1;
      ++pos;
      int oh = 0, om = 0;
      if (!read_digits(s, pos, 2, oh)) return std::nullopt;
      expect(s, pos, ':');
      if (!read_digits(s, pos, 2, om)) return std::nullopt;
      if (oh > 23 || om > 59) return std::nullopt;
      offset_minutes = sign * (oh * 60 + om);
    }
  }
  if (pos != s.size()) return std::nullopt;
  if (hour > 24 || minute > 59 || second > 60 || (hour == 24 && (minute != 0 || second != 0 || micros != 0))) {
    return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                                        std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  const std::int64_t days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  const std::int64_t secs = days * 86400 + hour * 3600 + minute * 60 + second - offset_minutes * 60;
  return secs * 1000000 + micros;
}

rdf::Graph filter_temporal(const rdf::Graph& g, const std::string& time_predicate, std::string_view from,
                           std::string_view to) {
  const auto lo = parse_timestamp(from);
  const auto hi = parse_timestamp(to);
  if (!lo) throw Error(Errc::InvalidRange, "'from' is not an ISO-8601 timestamp: " + std::string(from));
  if (!hi) throw Error(Errc::InvalidRange, "'to' is not an ISO-8601 timestamp: " + std::string(to));
  if (*lo > *hi) throw Error(Errc::InvalidRange, "'from' is after 'to'");
  const auto pred = rdf::Term::iri(time_predicate);
  std::vector<rdf::Term> keep;
  for (const auto& node : subjects_with(g, pred)) {
    for (const auto& v : g.objects(node, pred)) {
      const auto ts = v.is_literal() ? parse_timestamp(v.value()) : std::nullopt;
      if (ts && *ts >= *lo && *ts <= *hi) {
        keep.push_back(node);
        break;
      }
    }
  }
  return describe_all(g, keep);
}

BBox parse_bbox(std::string_view text) {
  double v[4];
  std::size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    const auto comma = text.find(',', start);
    if ((i < 3) == (comma == std::string_view::npos)) {
      throw Error(Errc::InvalidRange, "bbox must be minLat,minLon,maxLat,maxLon");
    }
    const auto part = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    const auto n = rdf::parse_number(part);
    if (!n) throw Error(Errc::InvalidRange, "bbox component '" + std::string(part) + "' is not a number");
    v[i] = *n;
    start = comma + 1;
  }
  if (v[0] > v[2] || v[1] > v[3]) throw Error(Errc::InvalidRange, "bbox minimum exceeds maximum");
  return {v[0], v[1], v[2], v[3]};
}

rdf::Graph filter_bbox(const rdf::Graph& g, const std::string& lat_predicate, const std::string& lon_predicate,
                       const BBox& box) {
  if (!(box.min_lat <= box.max_lat) || !(box.min_lon <= box.max_lon)) {
    throw Error(Errc::InvalidRange, "bbox minimum exceeds maximum");
  }
  const auto lat_p = rdf::Term::iri(lat_predicate);
  const auto lon_p = rdf::Term::iri(lon_predicate);
  auto numbers = [&](const rdf::Term& node, const rdf::Term& p) {
    std::vector<double> out;
    for (const auto& v : g.objects(node, p)) {
      if (!v.is_literal()) continue;
      if (auto n = rdf::parse_number(v.value())) out.push_back(*n);
    }
    return out;
  };
  std::vector<rdf::Term> keep;
  for (const auto& node : subjects_with(g, lat_p)) {
    const auto lats = numbers(node, lat_p);
    const auto lons = numbers(node, lon_p);
    const bool lat_in = std::any_of(lats.begin(), lats.end(), [&](double x) { return x >= box.min_lat && x <= box.max_lat; });
    const bool lon_in = std::any_of(lons.begin(), lons.end(), [&](double x) { return x >= box.min_lon && x <= box.max_lon; });
    if (lat_in && lon_in) keep.push_back(node);
  }
  return describe_all(g, keep);
}

}  // namespace harmony::ops
