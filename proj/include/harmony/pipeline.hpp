#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "harmony/graph_ops.hpp"
#include "harmony/lowering.hpp"
#include "harmony/mapping.hpp"

// A pipeline is a lift, a list of graph operations and an optional lowering.
//
// Spec file (JSON):
//   {"id": "...", "prefixes": {...}, "staticSources": {"name": "relative/path"},
//    "steps": [
//      {"lift": {"mapping": "m.json", "sources": ["a"], "as": "g1"}},
//      {"graphOp": {"op": "fuse", "canonical": "g1", "link": {"classA", "keyPropA", "classB", "keyPropB"}}},
//      {"graphOp": {"op": "union", "with": "g1"}},
//      {"graphOp": {"op": "filterTemporal", "predicate", "from", "to"}},
//      {"graphOp": {"op": "filterBBox", "lat", "lon", "bbox": "minLat,minLon,maxLat,maxLon"}},
//      {"graphOp": {"op": "validate", "shapes": "shapes.json"}},
//      {"lower": {"template": "t.lot"}}]}
//
// A lift without "as" merges into the working graph; with "as" it is only
// stored under that name for later fuse/union steps.
namespace harmony::pipeline {

struct LiftStep {
  std::string mapping;
  std::vector<std::string> sources;
  std::optional<std::string> as;
};

struct FuseStep {
  std::string canonical;
  ops::LinkSpec link;
};

struct UnionStep {
  std::string with;
};

struct TemporalStep {
  std::string predicate;
  std::string from;
  std::string to;
};

struct BBoxStep {
  std::string lat;
  std::string lon;
  ops::BBox box;
};

struct ValidateStep {
  std::string shapes;
};

struct LowerStep {
  std::string template_path;
};

using Step = std::variant<LiftStep, FuseStep, UnionStep, TemporalStep, BBoxStep, ValidateStep, LowerStep>;

struct PipelineSpec {
  std::string id;
  std::map<std::string, std::string> static_sources;
  std::vector<Step> steps;
};

// Throws PipelineError for structural problems (first step not a lift, lower
// not last, ...), UnknownPrefix for bad CURIEs, InvalidRange for bad bboxes.
PipelineSpec parse_spec(std::string_view document);

std::string describe(const Step& step);

// Where relative resource paths are looked up. Mappings and templates are
// searched in their dedicated directory first, then next to the spec.
struct ResourceDirs {
  std::filesystem::path spec_dir;
  std::filesystem::path mappings_dir;
  std::filesystem::path templates_dir;
};

// Filters requested at run time (gateway parameters); applied after the
// spec's own graph operations and before lowering.
using RuntimeFilter = std::variant<TemporalStep, BBoxStep>;

struct RunResult {
  rdf::Graph graph;
  std::optional<std::string> output;
  std::optional<lower::OutputFormat> format;
  double millis = 0;
};

class CompiledPipeline {
 public:
  // Parses every mapping, template and shapes file and reads static sources.
  // Lift steps that only read static sources are evaluated once here.
  CompiledPipeline(PipelineSpec spec, const ResourceDirs& dirs);

  const PipelineSpec& spec() const noexcept { return spec_; }
  const std::string& id() const noexcept { return spec_.id; }

  // Names of the sources the caller must provide.
  std::vector<std::string> dynamic_sources() const;

  std::optional<lower::OutputFormat> output_format() const;
  std::shared_ptr<const lower::Template> lowering() const { return template_; }

  // Runs every step. Failures inside a step are reported as PipelineError
  // naming the step; InvalidRange from runtime filters propagates as is.
  RunResult run(const lift::SourceSet& sources, const std::vector<RuntimeFilter>& filters = {}) const;

  // Same pipeline with its lowering replaced by `tpl` (or removed when null).
  std::shared_ptr<CompiledPipeline> with_template(std::shared_ptr<const lower::Template> tpl) const;

 private:
  struct CompiledLift {
    std::shared_ptr<const lift::LiftingMapping> mapping;
    lift::LookupSet lookups;
    std::optional<rdf::Graph> prelifted;
  };

  CompiledPipeline() = default;

  PipelineSpec spec_;
  lift::SourceSet static_sources_;
  std::map<std::size_t, CompiledLift> lifts_;
  std::map<std::size_t, std::vector<ops::Shape>> shapes_;
  std::shared_ptr<const lower::Template> template_;
};

CompiledPipeline load_pipeline(const std::filesystem::path& spec_file, const ResourceDirs& dirs = {});

// File helpers shared by the CLI, gateway and collector. Throw Io.
std::string read_text(const std::filesystem::path& p);
void write_text(const std::filesystem::path& p, std::string_view content);

}  // namespace harmony::pipeline
