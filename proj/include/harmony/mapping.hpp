#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "harmony/rdf.hpp"

// Declarative lifting: a JSON mapping document describes how records of a
// CSV, JSON or XML source become triples of the reference vocabulary.
namespace harmony::lift {

enum class SourceFormat { Csv, Json, Xml };

std::string_view to_string(SourceFormat f);

struct TermRule;

// A `{ref}` placeholder or a run of literal text inside a template.
struct TemplateSegment {
  bool placeholder = false;
  std::string text;
};

struct TemplateRule {
  std::string pattern;
  std::vector<TemplateSegment> segments;
};

struct ReferenceRule {
  std::string path;
};

struct ConstantRule {
  rdf::Term term;
};

struct FunctionRule {
  std::string name;
  std::vector<TermRule> args;
};

struct TermRule {
  std::variant<TemplateRule, ReferenceRule, ConstantRule, FunctionRule> body;
  rdf::Term::Kind term_type = rdf::Term::Kind::Literal;
  std::optional<std::string> datatype;
  std::optional<std::string> lang;
};

struct JoinRule {
  std::string map;
  std::string child_key;
  std::string parent_key;
};

struct PropertyRule {
  std::string predicate;
  std::variant<TermRule, JoinRule> value;
};

struct SourceSpec {
  SourceFormat format = SourceFormat::Csv;
  std::string iterator;
  // Name of the input this map reads; defaults to the map name.
  std::string source_name;
};

struct EntityMap {
  std::string name;
  SourceSpec source;
  TermRule subject;
  std::vector<std::string> types;
  std::vector<PropertyRule> properties;
};

struct LookupRef {
  std::string name;
  std::string csv_path;
};

struct LiftingMapping {
  rdf::PrefixMap prefixes;
  std::vector<LookupRef> lookups;
  std::vector<EntityMap> maps;

  const EntityMap* find(std::string_view name) const;
};

// Throws MappingSyntaxError, UnknownPrefix, DanglingJoin, UnknownFunction or
// ArityError.
LiftingMapping parse_mapping(std::string_view document);

class LookupTable {
 public:
  LookupTable() = default;
  LookupTable(std::string name, std::map<std::string, std::string> rows)
      : name_(std::move(name)), rows_(rows.begin(), rows.end()) {}

  // First column is the key, second the value; the first row is a header.
  static LookupTable from_csv(std::string name, std::string_view csv_text);

  const std::string& name() const noexcept { return name_; }
  std::optional<std::string> find(std::string_view key) const;
  std::size_t size() const noexcept { return rows_.size(); }

 private:
  std::string name_;
  std::map<std::string, std::string, std::less<>> rows_;
};

using LookupSet = std::map<std::string, LookupTable, std::less<>>;

// Loads every table the mapping declares, resolving csvPath against base_dir.
LookupSet load_lookups(const LiftingMapping& mapping, const std::filesystem::path& base_dir);

struct ParsedSource;

// One iteration item of a source: a CSV row, a JSON node or an XML element.
class Record {
 public:
  Record(std::shared_ptr<const ParsedSource> doc, const void* node) : doc_(std::move(doc)), node_(node) {}

  // Scalar value at the reference, or nullopt when it does not resolve.
  std::optional<std::string> get(std::string_view reference) const;

 private:
  std::shared_ptr<const ParsedSource> doc_;
  const void* node_;
};

// Throws SourceSyntaxError or IteratorNotFound.
std::vector<Record> iterate(std::string_view source, SourceFormat format, std::string_view iterator);

// Builtin function registry.
bool is_builtin(std::string_view name);
// Throws UnknownFunction or ArityError.
void check_builtin(std::string_view name, std::size_t arity);
// nullopt means the rule using the call is suppressed.
std::optional<std::string> call_builtin(std::string_view name, const std::vector<std::string>& args,
                                        const LookupSet& lookups);

// Shortest round-trip decimal; no exponent below 1e15; "36" rather than "36.0".
std::string format_number(double value);

// Percent-encodes bytes outside the IRI unreserved and reserved sets.
std::string encode_iri_component(std::string_view value);

using SourceSet = std::map<std::string, std::string, std::less<>>;

rdf::Graph lift(const LiftingMapping& mapping, const SourceSet& sources, const LookupSet& lookups = {});

}  // namespace harmony::lift
