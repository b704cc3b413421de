#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "harmony/rdf.hpp"

// Lowering templates (.lot): a header of directives followed by a body.
//
//   {% output json %}
//   {% prefix tgt: <https://w3id.org/harmony/rcm#> %}
//   {% query dets: ?d a tgt:TrafficDetector . ?d tgt:flow ?f filter ?f > 5 order by ?f %}
//   [{% for d in dets sep "," %}{"flow":$!{d.f}}{% end %}]
//
// `${v.x}` interpolates escaped for the output format, `$!{v.x}` raw. A line
// break directly after `%}` is not copied to the output.
namespace harmony::lower {

enum class OutputFormat { Json, Csv };

std::string_view to_string(OutputFormat f);

struct Position {
  std::size_t line = 1;
  std::size_t column = 1;
};

struct TextNode {
  std::string text;
};

struct InterpolationNode {
  std::string loop_var;
  std::string variable;
  bool raw = false;
  Position at;
};

struct ForNode;

using Node = std::variant<TextNode, InterpolationNode, std::unique_ptr<ForNode>>;

struct ForNode {
  std::string loop_var;
  std::string query;
  std::string separator;
  std::vector<Node> body;
  Position at;
};

struct NamedQuery {
  std::string name;
  rdf::Query query;
};

struct Template {
  OutputFormat format = OutputFormat::Json;
  rdf::PrefixMap prefixes;
  std::vector<NamedQuery> queries;
  std::vector<Node> body;

  const NamedQuery* find_query(std::string_view name) const;
};

struct TemplateStats {
  std::size_t queries = 0;
  std::size_t for_blocks = 0;
  std::size_t interpolations = 0;
  std::size_t text_chunks = 0;
};

TemplateStats stats(const Template& t);

// Throws TemplateSyntaxError (with line and column), UnknownQuery,
// UnboundTemplateVariable, UnknownPrefix or UnboundVariable.
Template parse_template(std::string_view text);

std::string render(const Template& t, const rdf::Graph& g);

// JSON string-content escaping (no surrounding quotes).
std::string json_escape(std::string_view s);

}  // namespace harmony::lower
