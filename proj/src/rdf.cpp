#include "harmony/rdf.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

namespace harmony::rdf {

bool is_absolute_iri(std::string_view text) {
  if (text.empty() || !std::isalpha(static_cast<unsigned char>(text[0]))) return false;
  for (std::size_t i = 1; i < text.size(); ++i) {
    const char c = text[i];
    if (c == ':') return true;
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '+' && c != '-' && c != '.') return false;
  }
  return false;
}

bool is_numeric_datatype(std::string_view datatype) {
  if (datatype.substr(0, ns::kXsd.size()) != ns::kXsd) return false;
  static const std::set<std::string, std::less<>> kNumeric = {
      "integer", "decimal", "double", "float", "int", "long", "short", "byte",
      "nonNegativeInteger", "positiveInteger", "negativeInteger", "nonPositiveInteger",
      "unsignedInt", "unsignedLong", "unsignedShort", "unsignedByte"};
  return kNumeric.count(datatype.substr(ns::kXsd.size())) != 0;
}

std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::string_view body = text;
  if (body.front() == '+') body.remove_prefix(1);
  if (body.empty()) return std::nullopt;
  // from_chars accepts "inf"/"nan"; only plain decimal notation counts here.
  for (char c : body) {
    if (!std::isdigit(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != 'e' && c != 'E' &&
        c != '+') {
      return std::nullopt;
    }
  }
  double value = 0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

Term Term::iri(std::string value) {
  if (!is_absolute_iri(value)) throw Error(Errc::InvalidTerm, "IRI is not absolute: '" + value + "'");
  Term t;
  t.kind_ = Kind::Iri;
  t.value_ = std::move(value);
  return t;
}

Term Term::literal(std::string lexical, std::string datatype) {
  if (datatype.empty()) datatype = kXsdString;
  if (!is_absolute_iri(datatype)) throw Error(Errc::InvalidTerm, "datatype is not an absolute IRI: '" + datatype + "'");
  if (datatype == kLangString) throw Error(Errc::InvalidTerm, "rdf:langString literal requires a language tag");
  Term t;
  t.kind_ = Kind::Literal;
  t.value_ = std::move(lexical);
  t.datatype_ = std::move(datatype);
  return t;
}

Term Term::lang_literal(std::string lexical, std::string lang) {
  if (lang.empty()) throw Error(Errc::InvalidTerm, "empty language tag");
  for (char c : lang) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') {
      throw Error(Errc::InvalidTerm, "malformed language tag '" + lang + "'");
    }
  }
  Term t;
  t.kind_ = Kind::Literal;
  t.value_ = std::move(lexical);
  t.datatype_ = kLangString;
  t.lang_ = std::move(lang);
  return t;
}

Triple::Triple(Term s, Term p, Term o) : subject(std::move(s)), predicate(std::move(p)), object(std::move(o)) {
  if (!subject.is_iri()) throw Error(Errc::InvalidTerm, "triple subject must be an IRI");
  if (!predicate.is_iri()) throw Error(Errc::InvalidTerm, "triple predicate must be an IRI");
}

std::vector<Triple> Graph::describe(const Term& subject) const {
  std::vector<Triple> out;
  // Triples order by subject first, so the description is one contiguous run;
  // a default Term is the smallest IRI.
  for (auto it = triples_.lower_bound(Triple(subject, Term{}, Term{})); it != triples_.end(); ++it) {
    if (it->subject != subject) break;
    out.push_back(*it);
  }
  return out;
}

std::vector<Term> Graph::objects(const Term& subject, const Term& predicate) const {
  std::vector<Term> out;
  for (const auto& t : describe(subject)) {
    if (t.predicate == predicate) out.push_back(t.object);
  }
  return out;
}

std::vector<Term> Graph::instances_of(const Term& cls) const {
  std::vector<Term> out;
  for (const auto& t : triples_) {
    if (t.predicate.value() == kRdfType && t.object == cls) out.push_back(t.subject);
  }
  return out;
}

Graph insert(Graph g, const Triple& t) {
  g.insert(t);
  return g;
}

PrefixMap PrefixMap::with_defaults() {
  PrefixMap m;
  m.bind("rdf", std::string(ns::kRdf));
  m.bind("rdfs", std::string(ns::kRdfs));
  m.bind("xsd", std::string(ns::kXsd));
  return m;
}

std::string PrefixMap::expand(std::string_view text) const {
  if (text.size() >= 2 && text.front() == '<' && text.back() == '>') {
    std::string iri(text.substr(1, text.size() - 2));
    if (!is_absolute_iri(iri)) throw Error(Errc::InvalidTerm, "IRI is not absolute: '" + iri + "'");
    return iri;
  }
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(Errc::UnknownPrefix, "'" + std::string(text) + "' is neither a CURIE nor an IRI");
  }
  const std::string prefix(text.substr(0, colon));
  if (auto it = bindings_.find(prefix); it != bindings_.end()) {
    return it->second + std::string(text.substr(colon + 1));
  }
  if (text.substr(colon + 1, 2) == "//" && is_absolute_iri(text)) return std::string(text);
  throw Error(Errc::UnknownPrefix, "prefix '" + prefix + "' is not bound (in '" + std::string(text) + "')");
}

std::string PrefixMap::compact(std::string_view iri) const {
  const std::pair<const std::string, std::string>* best = nullptr;
  for (const auto& entry : bindings_) {
    const auto& ns = entry.second;
    if (ns.size() < iri.size() && iri.substr(0, ns.size()) == ns) {
      if (best == nullptr || ns.size() > best->second.size()) best = &entry;
    }
  }
  if (best == nullptr) return std::string(iri);
  return best->first + ":" + std::string(iri.substr(best->second.size()));
}

}  // namespace harmony::rdf
