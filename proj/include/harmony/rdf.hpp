#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "harmony/error.hpp"

namespace harmony::rdf {

namespace ns {
inline constexpr std::string_view kRdf = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
inline constexpr std::string_view kRdfs = "http://www.w3.org/2000/01/rdf-schema#";
inline constexpr std::string_view kXsd = "http://www.w3.org/2001/XMLSchema#";
}  // namespace ns

inline const std::string kRdfType = std::string(ns::kRdf) + "type";
inline const std::string kLangString = std::string(ns::kRdf) + "langString";
inline const std::string kXsdString = std::string(ns::kXsd) + "string";
inline const std::string kXsdInteger = std::string(ns::kXsd) + "integer";
inline const std::string kXsdDecimal = std::string(ns::kXsd) + "decimal";
inline const std::string kXsdDouble = std::string(ns::kXsd) + "double";
inline const std::string kXsdDateTime = std::string(ns::kXsd) + "dateTime";

// True when `text` starts with a URI scheme followed by ':'.
bool is_absolute_iri(std::string_view text);

// True for xsd numeric datatypes (integer, decimal, double, float and the
// derived integer types).
bool is_numeric_datatype(std::string_view datatype);

// Strict decimal/scientific parse of a whole string; nullopt when any part of
// the input is not a number.
std::optional<double> parse_number(std::string_view text);

class Term {
 public:
  enum class Kind : std::uint8_t { Iri, Literal };

  Term() = default;

  static Term iri(std::string value);
  static Term literal(std::string lexical, std::string datatype = kXsdString);
  static Term lang_literal(std::string lexical, std::string lang);

  Kind kind() const noexcept { return kind_; }
  bool is_iri() const noexcept { return kind_ == Kind::Iri; }
  bool is_literal() const noexcept { return kind_ == Kind::Literal; }

  // The IRI for IRI terms, the lexical form for literals.
  const std::string& value() const noexcept { return value_; }
  const std::string& datatype() const noexcept { return datatype_; }
  const std::string& lang() const noexcept { return lang_; }

  std::string to_ntriples() const;

  auto operator<=>(const Term&) const = default;
  bool operator==(const Term&) const = default;

 private:
  Kind kind_ = Kind::Iri;
  std::string value_;
  std::string datatype_;
  std::string lang_;
};

struct Triple {
  Term subject;
  Term predicate;
  Term object;

  // Throws InvalidTerm unless subject and predicate are IRIs.
  Triple(Term s, Term p, Term o);

  std::string to_ntriples() const;

  auto operator<=>(const Triple&) const = default;
  bool operator==(const Triple&) const = default;
};

class Graph {
 public:
  using const_iterator = std::set<Triple>::const_iterator;

  Graph() = default;

  // Returns true when the triple was not already present.
  bool insert(const Triple& t) { return triples_.insert(t).second; }
  bool insert(Term s, Term p, Term o) { return insert(Triple(std::move(s), std::move(p), std::move(o))); }
  void insert_all(const Graph& other) { triples_.insert(other.begin(), other.end()); }

  bool contains(const Triple& t) const { return triples_.count(t) != 0; }
  std::size_t size() const noexcept { return triples_.size(); }
  bool empty() const noexcept { return triples_.empty(); }

  const_iterator begin() const { return triples_.begin(); }
  const_iterator end() const { return triples_.end(); }

  // Triples whose subject is `subject`, in set order.
  std::vector<Triple> describe(const Term& subject) const;

  // Objects of (subject, predicate, *).
  std::vector<Term> objects(const Term& subject, const Term& predicate) const;

  // Subjects s with (s, rdf:type, cls).
  std::vector<Term> instances_of(const Term& cls) const;

  bool operator==(const Graph&) const = default;

 private:
  std::set<Triple> triples_;
};

Graph insert(Graph g, const Triple& t);

class PrefixMap {
 public:
  PrefixMap() = default;
  explicit PrefixMap(std::map<std::string, std::string> bindings) : bindings_(std::move(bindings)) {}

  // rdf, rdfs and xsd bound.
  static PrefixMap with_defaults();

  void bind(std::string prefix, std::string ns) { bindings_[std::move(prefix)] = std::move(ns); }
  bool has(std::string_view prefix) const { return bindings_.find(std::string(prefix)) != bindings_.end(); }
  const std::map<std::string, std::string>& bindings() const noexcept { return bindings_; }

  // Accepts `<iri>`, a CURIE with a bound prefix, or a hierarchical absolute
  // IRI ("scheme://..."). Throws UnknownPrefix otherwise.
  std::string expand(std::string_view curie_or_iri) const;

  // Longest matching namespace wins; returns the IRI unchanged when no
  // namespace applies.
  std::string compact(std::string_view iri) const;

 private:
  std::map<std::string, std::string> bindings_;
};

struct Variable {
  std::string name;
  auto operator<=>(const Variable&) const = default;
};

using PatternTerm = std::variant<Term, Variable>;

struct TriplePattern {
  PatternTerm subject;
  PatternTerm predicate;
  PatternTerm object;
};

enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge };

struct Filter {
  std::string variable;
  CompareOp op = CompareOp::Eq;
  Term constant;
};

struct Query {
  std::vector<TriplePattern> patterns;
  std::vector<Filter> filters;
  std::optional<std::string> order_by;

  // Variables mentioned in patterns, sorted.
  std::set<std::string> variables() const;

  // Throws UnboundVariable when a filter or order-by variable is absent from
  // every pattern.
  void check() const;
};

using Binding = std::map<std::string, Term>;

// Numbers sort before non-numbers; numbers compare numerically, everything
// else compares lexically. Returns <0, 0, >0.
int compare_values(std::string_view a, std::string_view b);

bool apply_compare(CompareOp op, std::string_view lhs, std::string_view rhs);

// Natural join of the patterns (left to right), then filters, then the
// deterministic sort. `seed` pre-binds variables (used by nested template
// loops); seeded variables appear in the returned bindings.
std::vector<Binding> match(const Graph& g, const Query& q, const Binding& seed = {});

std::string serialize_ntriples(const Graph& g);
Graph parse_ntriples(std::string_view text);

}  // namespace harmony::rdf
