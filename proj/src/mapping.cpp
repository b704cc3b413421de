#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "harmony/csv.hpp"
#include "harmony/mapping.hpp"

namespace harmony::lift {

namespace {

using nlohmann::json;

[[noreturn]] void syntax(const std::string& where, const std::string& what) {
  throw Error(Errc::MappingSyntaxError, where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) syntax(where, std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) syntax(where, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<TemplateSegment> split_template(const std::string& pattern, const std::string& where) {
  std::vector<TemplateSegment> segments;
  std::string text;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '{' && i + 1 < pattern.size() && pattern[i + 1] == '{') {
      text.push_back('{');
      ++i;
    } else if (c == '}' && i + 1 < pattern.size() && pattern[i + 1] == '}') {
      text.push_back('}');
      ++i;
    } else if (c == '{') {
      const auto close = pattern.find('}', i + 1);
      if (close == std::string::npos) syntax(where, "unclosed '{' in template '" + pattern + "'");
      const auto ref = pattern.substr(i + 1, close - i - 1);
      if (ref.empty() || ref.find('{') != std::string::npos) {
        syntax(where, "malformed placeholder in template '" + pattern + "'");
      }
      if (!text.empty()) segments.push_back({false, std::move(text)});
      text.clear();
      segments.push_back({true, ref});
      i = close;
    } else if (c == '}') {
      syntax(where, "stray '}' in template '" + pattern + "'");
    } else {
      text.push_back(c);
    }
  }
  if (!text.empty()) segments.push_back({false, std::move(text)});
  return segments;
}

// Expands a leading CURIE prefix in the literal head of an IRI template, so
// "ex:det/{id}" becomes "http://example.org/det/{id}".
void expand_template_prefix(TemplateRule& rule, const rdf::PrefixMap& prefixes) {
  if (rule.segments.empty() || rule.segments.front().placeholder) return;
  auto& head = rule.segments.front().text;
  const auto colon = head.find(':');
  if (colon == std::string::npos) return;
  head = prefixes.expand(head);
}

TermRule parse_term_rule(const json& j, const rdf::PrefixMap& prefixes, const std::string& where,
                         rdf::Term::Kind default_template_kind);

TermRule parse_function_arg(const json& j, const rdf::PrefixMap& prefixes, const std::string& where) {
  if (j.is_string()) {
    TermRule r;
    r.body = ConstantRule{rdf::Term::literal(j.get<std::string>())};
    return r;
  }
  if (j.is_number()) {
    TermRule r;
    r.body = ConstantRule{rdf::Term::literal(j.dump())};
    return r;
  }
  return parse_term_rule(j, prefixes, where, rdf::Term::Kind::Literal);
}

TermRule parse_term_rule(const json& j, const rdf::PrefixMap& prefixes, const std::string& where,
                         rdf::Term::Kind default_template_kind) {
  if (!j.is_object()) syntax(where, "term rule must be an object");
  int kinds = 0;
  for (const char* k : {"template", "reference", "constant", "function"}) kinds += j.contains(k) ? 1 : 0;
  if (kinds != 1) syntax(where, "term rule needs exactly one of template/reference/constant/function");

  TermRule rule;
  if (auto it = j.find("datatype"); it != j.end()) {
    if (!it->is_string()) syntax(where, "datatype must be a string");
    rule.datatype = prefixes.expand(it->get<std::string>());
  }
  if (auto it = j.find("lang"); it != j.end()) {
    if (!it->is_string()) syntax(where, "lang must be a string");
    rule.lang = it->get<std::string>();
  }
  if (rule.datatype && rule.lang) syntax(where, "a rule cannot carry both datatype and lang");

  std::optional<rdf::Term::Kind> explicit_kind;
  if (auto it = j.find("termType"); it != j.end()) {
    const auto v = it->is_string() ? it->get<std::string>() : "";
    if (v == "iri") explicit_kind = rdf::Term::Kind::Iri;
    else if (v == "literal") explicit_kind = rdf::Term::Kind::Literal;
    else syntax(where, "termType must be 'iri' or 'literal'");
  }
  const bool literal_hint = rule.datatype.has_value() || rule.lang.has_value();
  if (explicit_kind == rdf::Term::Kind::Iri && literal_hint) syntax(where, "an IRI rule cannot carry datatype or lang");

  if (j.contains("template")) {
    TemplateRule t;
    t.pattern = require_string(j, "template", where);
    t.segments = split_template(t.pattern, where);
    rule.term_type = explicit_kind.value_or(literal_hint ? rdf::Term::Kind::Literal : default_template_kind);
    if (rule.term_type == rdf::Term::Kind::Iri) expand_template_prefix(t, prefixes);
    rule.body = std::move(t);
  } else if (j.contains("reference")) {
    rule.body = ReferenceRule{require_string(j, "reference", where)};
    rule.term_type = explicit_kind.value_or(rdf::Term::Kind::Literal);
  } else if (j.contains("constant")) {
    const auto& c = j.at("constant");
    std::string value = c.is_string() ? c.get<std::string>() : (c.is_number() ? c.dump() : "");
    if (!c.is_string() && !c.is_number()) syntax(where, "constant must be a string or number");
    rule.term_type = explicit_kind.value_or(literal_hint || c.is_number() ? rdf::Term::Kind::Literal
                                                                            : rdf::Term::Kind::Iri);
    if (rule.term_type == rdf::Term::Kind::Iri) {
      rule.body = ConstantRule{rdf::Term::iri(prefixes.expand(value))};
    } else if (rule.lang) {
      rule.body = ConstantRule{rdf::Term::lang_literal(std::move(value), *rule.lang)};
    } else {
      const auto& fallback = c.is_number_float() ? rdf::kXsdDouble : (c.is_number() ? rdf::kXsdInteger : rdf::kXsdString);
      rule.body = ConstantRule{rdf::Term::literal(std::move(value), rule.datatype.value_or(fallback))};
    }
  } else {
    const auto& f = j.at("function");
    if (!f.is_object()) syntax(where, "function must be an object {name, args}");
    FunctionRule fn;
    fn.name = require_string(f, "name", where);
    if (auto it = f.find("args"); it != f.end()) {
      if (!it->is_array()) syntax(where, "function args must be an array");
      for (std::size_t i = 0; i < it->size(); ++i) {
        fn.args.push_back(parse_function_arg((*it)[i], prefixes, where + ".args[" + std::to_string(i) + "]"));
      }
    }
    check_builtin(fn.name, fn.args.size());
    rule.term_type = explicit_kind.value_or(rdf::Term::Kind::Literal);
    rule.body = std::move(fn);
  }
  return rule;
}

SourceFormat parse_format(const std::string& s, const std::string& where) {
  if (s == "csv") return SourceFormat::Csv;
  if (s == "json") return SourceFormat::Json;
  if (s == "xml") return SourceFormat::Xml;
  syntax(where, "unknown source format '" + s + "'");
}

}  // namespace

std::string_view to_string(SourceFormat f) {
  switch (f) {
    case SourceFormat::Csv: return "csv";
    case SourceFormat::Json: return "json";
    case SourceFormat::Xml: return "xml";
  }
  return "?";
}

const EntityMap* LiftingMapping::find(std::string_view name) const {
  for (const auto& m : maps) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

LiftingMapping parse_mapping(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MappingSyntaxError, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) syntax("document", "top level must be an object");

  LiftingMapping mapping;
  mapping.prefixes = rdf::PrefixMap::with_defaults();
  if (auto it = doc.find("prefixes"); it != doc.end()) {
    if (!it->is_object()) syntax("prefixes", "must be an object");
    for (const auto& [label, iri] : it->items()) {
      if (!iri.is_string()) syntax("prefixes." + label, "namespace must be a string");
      mapping.prefixes.bind(label, iri.get<std::string>());
    }
  }
  if (auto it = doc.find("lookups"); it != doc.end()) {
    if (!it->is_array()) syntax("lookups", "must be an array");
    for (const auto& l : *it) {
      mapping.lookups.push_back({require_string(l, "name", "lookups"), require_string(l, "csvPath", "lookups")});
    }
  }

  const auto& maps = require(doc, "maps", "document");
  if (!maps.is_array()) syntax("maps", "must be an array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    std::string where = "maps[" + std::to_string(i) + "]";
    if (!m.is_object()) syntax(where, "must be an object");
    EntityMap em;
    em.name = require_string(m, "name", where);
    where = "map '" + em.name + "'";
    if (!names.insert(em.name).second) syntax(where, "duplicate map name");

    const auto& src = require(m, "source", where);
    if (!src.is_object()) syntax(where, "source must be an object");
    em.source.format = parse_format(require_string(src, "format", where + ".source"), where + ".source");
    if (auto it = src.find("iterator"); it != src.end() && it->is_string()) em.source.iterator = it->get<std::string>();
    if (em.source.format != SourceFormat::Csv && em.source.iterator.empty()) {
      syntax(where + ".source", "iterator is required for json and xml sources");
    }
    em.source.source_name = src.value("sourceName", em.name);

    em.subject = parse_term_rule(require(m, "subject", where), mapping.prefixes, where + ".subject",
                                 rdf::Term::Kind::Iri);
    if (!std::holds_alternative<TemplateRule>(em.subject.body) &&
        !std::holds_alternative<ConstantRule>(em.subject.body)) {
      syntax(where + ".subject", "subject must be a template or a constant");
    }
    if (em.subject.term_type != rdf::Term::Kind::Iri) syntax(where + ".subject", "subject must produce an IRI");

    if (auto it = m.find("types"); it != m.end()) {
      if (!it->is_array()) syntax(where, "types must be an array");
      for (const auto& t : *it) {
        if (!t.is_string()) syntax(where, "types entries must be strings");
        em.types.push_back(mapping.prefixes.expand(t.get<std::string>()));
      }
    }
    if (auto it = m.find("properties"); it != m.end()) {
      if (!it->is_array()) syntax(where, "properties must be an array");
      for (std::size_t k = 0; k < it->size(); ++k) {
        const auto& p = (*it)[k];
        const auto pw = where + ".properties[" + std::to_string(k) + "]";
        if (!p.is_object()) syntax(pw, "must be an object");
        PropertyRule rule;
        rule.predicate = mapping.prefixes.expand(require_string(p, "predicate", pw));
        if (auto jt = p.find("join"); jt != p.end()) {
          rule.value = JoinRule{require_string(*jt, "map", pw + ".join"), require_string(*jt, "childKey", pw + ".join"),
                                require_string(*jt, "parentKey", pw + ".join")};
        } else {
          json body = p;
          body.erase("predicate");
          rule.value = parse_term_rule(body, mapping.prefixes, pw, rdf::Term::Kind::Iri);
        }
        em.properties.push_back(std::move(rule));
      }
    }
    mapping.maps.push_back(std::move(em));
  }

  for (const auto& em : mapping.maps) {
    for (const auto& p : em.properties) {
      if (const auto* join = std::get_if<JoinRule>(&p.value); join && mapping.find(join->map) == nullptr) {
        throw Error(Errc::DanglingJoin, "map '" + em.name + "' property <" + p.predicate + "> joins unknown map '" +
                                            join->map + "'");
      }
    }
  }
  return mapping;
}

LookupTable LookupTable::from_csv(std::string name, std::string_view csv_text) {
  const auto rows = csv::parse(csv_text);
  std::map<std::string, std::string> table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() == 1 && rows[i][0].empty()) continue;
    if (rows[i].size() < 2) {
      throw Error(Errc::SourceSyntaxError, "lookup table '" + name + "' row " + std::to_string(i + 1) +
                                               " has fewer than two columns");
    }
    if (!table.emplace(rows[i][0], rows[i][1]).second) {
      throw Error(Errc::SourceSyntaxError, "lookup table '" + name + "' repeats key '" + rows[i][0] + "'");
    }
  }
  return LookupTable(std::move(name), std::move(table));
}

std::optional<std::string> LookupTable::find(std::string_view key) const {
  if (auto it = rows_.find(key); it != rows_.end()) return it->second;
  return std::nullopt;
}

LookupSet load_lookups(const LiftingMapping& mapping, const std::filesystem::path& base_dir) {
  LookupSet out;
  for (const auto& ref : mapping.lookups) {
    const auto path = base_dir / ref.csv_path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read lookup table '" + ref.name + "' at " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    out.emplace(ref.name, LookupTable::from_csv(ref.name, ss.str()));
  }
  return out;
}

}  // namespace harmony::lift
