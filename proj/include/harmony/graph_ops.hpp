#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/rdf.hpp"

// Operations applied between lifting and lowering. All of them are pure.
namespace harmony::ops {

rdf::Graph union_of(const rdf::Graph& a, const rdf::Graph& b);

struct LinkSpec {
  std::string class_a;
  std::string key_prop_a;
  std::string class_b;
  std::string key_prop_b;
};

// Rewrites every classB node of g2 whose key literal equals the key literal of
// a classA node of g1 to that node, then unions. g1 is canonical. Throws
// AmbiguousKey when a g2 key resolves to more than one g1 node.
rdf::Graph fuse(const rdf::Graph& g1, const rdf::Graph& g2, const LinkSpec& spec);

enum class NodeKind { Iri, Literal };

struct Constraint {
  std::string predicate;
  std::size_t min_count = 0;
  std::optional<std::size_t> max_count;
  std::optional<std::string> datatype;
  std::optional<NodeKind> node_kind;
};

struct Shape {
  std::string target_class;
  std::vector<Constraint> constraints;
};

enum class ConstraintKind { MinCount, MaxCount, Datatype, NodeKind };

std::string_view to_string(ConstraintKind k);

struct Violation {
  rdf::Term focus_node;
  std::string predicate;
  ConstraintKind kind = ConstraintKind::MinCount;
  std::string message;

  auto operator<=>(const Violation&) const = default;
};

struct ValidationReport {
  bool conforms = true;
  std::vector<Violation> violations;
};

ValidationReport validate(const rdf::Graph& g, const std::vector<Shape>& shapes);

// Accepts a JSON list of shapes, or {"prefixes": {...}, "shapes": [...]}.
// Throws ShapeSyntaxError or UnknownPrefix.
std::vector<Shape> parse_shapes(std::string_view document);

std::string report_to_json(const ValidationReport& report);

// ISO-8601 date or date-time to microseconds since the Unix epoch, UTC.
// Timestamps without an offset are taken as UTC.
std::optional<std::int64_t> parse_timestamp(std::string_view text);

// Keeps the outgoing triples of every node with some `time_predicate` value in
// [from, to]. Throws InvalidRange on unparsable bounds or from > to.
rdf::Graph filter_temporal(const rdf::Graph& g, const std::string& time_predicate, std::string_view from,
                           std::string_view to);

struct BBox {
  double min_lat = 0;
  double min_lon = 0;
  double max_lat = 0;
  double max_lon = 0;
};

// "minLat,minLon,maxLat,maxLon". Throws InvalidRange.
BBox parse_bbox(std::string_view text);

// Keeps the outgoing triples of every node whose lat/lon lies inside the
// closed, planar box. Throws InvalidRange when min > max.
rdf::Graph filter_bbox(const rdf::Graph& g, const std::string& lat_predicate, const std::string& lon_predicate,
                       const BBox& box);

}  // namespace harmony::ops
