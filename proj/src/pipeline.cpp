#include "harmony/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace harmony::pipeline {

namespace {

using nlohmann::json;

[[noreturn]] void spec_error(const std::string& msg) { throw Error(Errc::PipelineError, msg); }

std::string str(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) spec_error(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

std::filesystem::path resolve(const std::string& rel, const std::filesystem::path& preferred,
                              const std::filesystem::path& fallback) {
  std::filesystem::path p(rel);
  if (p.is_absolute()) return p;
  if (!preferred.empty() && std::filesystem::exists(preferred / p)) return preferred / p;
  return fallback / p;
}

}  // namespace

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, std::string_view content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::Io, "short write to " + p.string());
}

PipelineSpec parse_spec(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    spec_error(std::string("pipeline spec is not JSON: ") + e.what());
  }
  if (!doc.is_object()) spec_error("pipeline spec must be an object");
  PipelineSpec spec;
  spec.id = str(doc, "id", "pipeline");
  auto prefixes = rdf::PrefixMap::with_defaults();
  if (auto it = doc.find("prefixes"); it != doc.end()) {
    if (!it->is_object()) spec_error("prefixes must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) spec_error("prefix '" + k + "' must map to a string");
      prefixes.bind(k, v.get<std::string>());
    }
  }
  if (auto it = doc.find("staticSources"); it != doc.end()) {
    if (!it->is_object()) spec_error("staticSources must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) spec_error("static source '" + k + "' must be a path");
      spec.static_sources[k] = v.get<std::string>();
    }
  }
  auto steps = doc.find("steps");
  if (steps == doc.end() || !steps->is_array() || steps->empty()) spec_error("steps must be a non-empty list");

  std::set<std::string> named;
  for (std::size_t i = 0; i < steps->size(); ++i) {
    const auto& s = (*steps)[i];
    const auto where = "step " + std::to_string(i + 1);
    if (!s.is_object() || s.size() != 1) spec_error(where + ": expected exactly one of lift/graphOp/lower");
    if (auto it = s.find("lift"); it != s.end()) {
      LiftStep step;
      step.mapping = str(*it, "mapping", where);
      auto src = it->find("sources");
      if (src == it->end() || !src->is_array()) spec_error(where + ": 'sources' must be a list");
      for (const auto& name : *src) {
        if (!name.is_string()) spec_error(where + ": source names must be strings");
        step.sources.push_back(name.get<std::string>());
      }
      if (it->contains("as")) {
        step.as = str(*it, "as", where);
        named.insert(*step.as);
      }
      spec.steps.emplace_back(std::move(step));
    } else if (auto op = s.find("graphOp"); op != s.end()) {
      const auto kind = str(*op, "op", where);
      if (kind == "fuse") {
        FuseStep step;
        step.canonical = str(*op, "canonical", where);
        if (!named.count(step.canonical)) spec_error(where + ": no earlier lift is named '" + step.canonical + "'");
        auto link = op->find("link");
        if (link == op->end() || !link->is_object()) spec_error(where + ": 'link' must be an object");
        step.link = {prefixes.expand(str(*link, "classA", where)), prefixes.expand(str(*link, "keyPropA", where)),
                     prefixes.expand(str(*link, "classB", where)), prefixes.expand(str(*link, "keyPropB", where))};
        spec.steps.emplace_back(std::move(step));
      } else if (kind == "union") {
        UnionStep step{str(*op, "with", where)};
        if (!named.count(step.with)) spec_error(where + ": no earlier lift is named '" + step.with + "'");
        spec.steps.emplace_back(std::move(step));
      } else if (kind == "filterTemporal") {
        TemporalStep step{prefixes.expand(str(*op, "predicate", where)), str(*op, "from", where),
                          str(*op, "to", where)};
        const auto lo = ops::parse_timestamp(step.from), hi = ops::parse_timestamp(step.to);
        if (!lo || !hi || *lo > *hi) throw Error(Errc::InvalidRange, where + ": bad time window");
        spec.steps.emplace_back(std::move(step));
      } else if (kind == "filterBBox") {
        BBoxStep step{prefixes.expand(str(*op, "lat", where)), prefixes.expand(str(*op, "lon", where)),
                      ops::parse_bbox(str(*op, "bbox", where))};
        spec.steps.emplace_back(std::move(step));
      } else if (kind == "validate") {
        spec.steps.emplace_back(ValidateStep{str(*op, "shapes", where)});
      } else {
        spec_error(where + ": unknown graph operation '" + kind + "'");
      }
    } else if (auto lw = s.find("lower"); lw != s.end()) {
      if (i + 1 != steps->size()) spec_error(where + ": lower must be the last step");
      spec.steps.emplace_back(LowerStep{str(*lw, "template", where)});
    } else {
      spec_error(where + ": expected lift, graphOp or lower");
    }
  }
  if (!std::holds_alternative<LiftStep>(spec.steps.front())) spec_error("the first step must be a lift");
  return spec;
}

std::string describe(const Step& step) {
  struct {
    std::string operator()(const LiftStep& s) const { return "lift " + s.mapping; }
    std::string operator()(const FuseStep& s) const { return "fuse with " + s.canonical; }
    std::string operator()(const UnionStep& s) const { return "union with " + s.with; }
    std::string operator()(const TemporalStep&) const { return "filterTemporal"; }
    std::string operator()(const BBoxStep&) const { return "filterBBox"; }
    std::string operator()(const ValidateStep& s) const { return "validate " + s.shapes; }
    std::string operator()(const LowerStep& s) const { return "lower " + s.template_path; }
  } visitor;
  return std::visit(visitor, step);
}

CompiledPipeline::CompiledPipeline(PipelineSpec spec, const ResourceDirs& dirs) : spec_(std::move(spec)) {
  for (const auto& [name, rel] : spec_.static_sources) {
    static_sources_[name] = read_text(resolve(rel, {}, dirs.spec_dir));
  }
  for (std::size_t i = 0; i < spec_.steps.size(); ++i) {
    const auto& step = spec_.steps[i];
    try {
      if (const auto* l = std::get_if<LiftStep>(&step)) {
        const auto path = resolve(l->mapping, dirs.mappings_dir, dirs.spec_dir);
        CompiledLift c;
        c.mapping = std::make_shared<lift::LiftingMapping>(lift::parse_mapping(read_text(path)));
        c.lookups = lift::load_lookups(*c.mapping, path.parent_path());
        bool all_static = true;
        for (const auto& s : l->sources) all_static = all_static && static_sources_.count(s);
        if (all_static) c.prelifted = lift::lift(*c.mapping, static_sources_, c.lookups);
        lifts_.emplace(i, std::move(c));
      } else if (const auto* v = std::get_if<ValidateStep>(&step)) {
        shapes_.emplace(i, ops::parse_shapes(read_text(resolve(v->shapes, {}, dirs.spec_dir))));
      } else if (const auto* w = std::get_if<LowerStep>(&step)) {
        template_ = std::make_shared<lower::Template>(
            lower::parse_template(read_text(resolve(w->template_path, dirs.templates_dir, dirs.spec_dir))));
      }
    } catch (const Error& e) {
      throw Error(Errc::PipelineError, "pipeline '" + spec_.id + "', step " + std::to_string(i + 1) + " (" +
                                           describe(step) + "): " + e.what());
    }
  }
}

std::vector<std::string> CompiledPipeline::dynamic_sources() const {
  std::set<std::string> out;
  for (const auto& step : spec_.steps) {
    if (const auto* l = std::get_if<LiftStep>(&step)) {
      for (const auto& s : l->sources) {
        if (!static_sources_.count(s)) out.insert(s);
      }
    }
  }
  return {out.begin(), out.end()};
}

std::optional<lower::OutputFormat> CompiledPipeline::output_format() const {
  if (!template_) return std::nullopt;
  return template_->format;
}

RunResult CompiledPipeline::run(const lift::SourceSet& sources, const std::vector<RuntimeFilter>& filters) const {
  const auto started = std::chrono::steady_clock::now();
  rdf::Graph current;
  std::map<std::string, rdf::Graph, std::less<>> named;

  auto apply_filter = [&](const RuntimeFilter& f) {
    if (const auto* t = std::get_if<TemporalStep>(&f)) {
      current = ops::filter_temporal(current, t->predicate, t->from, t->to);
    } else {
      const auto& b = std::get<BBoxStep>(f);
      current = ops::filter_bbox(current, b.lat, b.lon, b.box);
    }
  };

  RunResult result;
  for (std::size_t i = 0; i < spec_.steps.size(); ++i) {
    const auto& step = spec_.steps[i];
    if (std::holds_alternative<LowerStep>(step)) break;
    try {
      if (const auto* l = std::get_if<LiftStep>(&step)) {
        const auto& c = lifts_.at(i);
        rdf::Graph g;
        if (c.prelifted) {
          g = *c.prelifted;
        } else {
          lift::SourceSet inputs;
          for (const auto& name : l->sources) {
            if (auto it = sources.find(name); it != sources.end()) {
              inputs.emplace(name, it->second);
            } else if (auto st = static_sources_.find(name); st != static_sources_.end()) {
              inputs.emplace(name, st->second);
            } else {
              throw Error(Errc::MissingSource, "no input named '" + name + "'");
            }
          }
          g = lift::lift(*c.mapping, inputs, c.lookups);
        }
        if (l->as) named[*l->as] = std::move(g);
        else current.insert_all(g);
      } else if (const auto* f = std::get_if<FuseStep>(&step)) {
        current = ops::fuse(named.at(f->canonical), current, f->link);
      } else if (const auto* u = std::get_if<UnionStep>(&step)) {
        current.insert_all(named.at(u->with));
      } else if (const auto* t = std::get_if<TemporalStep>(&step)) {
        apply_filter(*t);
      } else if (const auto* b = std::get_if<BBoxStep>(&step)) {
        apply_filter(*b);
      } else if (std::holds_alternative<ValidateStep>(step)) {
        const auto report = ops::validate(current, shapes_.at(i));
        if (!report.conforms) {
          const auto& v = report.violations.front();
          throw Error(Errc::SchemaViolation, std::to_string(report.violations.size()) + " violation(s), first: <" +
                                                 v.focus_node.value() + "> " + std::string(ops::to_string(v.kind)) +
                                                 " on <" + v.predicate + ">: " + v.message);
        }
      }
    } catch (const Error& e) {
      throw Error(Errc::PipelineError, "pipeline '" + spec_.id + "', step " + std::to_string(i + 1) + " (" +
                                           describe(step) + "): " + e.what());
    }
  }
  for (const auto& f : filters) apply_filter(f);
  if (template_) {
    result.output = lower::render(*template_, current);
    result.format = template_->format;
  }
  result.graph = std::move(current);
  result.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::shared_ptr<CompiledPipeline> CompiledPipeline::with_template(std::shared_ptr<const lower::Template> tpl) const {
  auto copy = std::shared_ptr<CompiledPipeline>(new CompiledPipeline());
  copy->spec_ = spec_;
  copy->static_sources_ = static_sources_;
  copy->lifts_ = lifts_;
  copy->shapes_ = shapes_;
  copy->template_ = std::move(tpl);
  return copy;
}

CompiledPipeline load_pipeline(const std::filesystem::path& spec_file, const ResourceDirs& dirs) {
  auto resolved = dirs;
  if (resolved.spec_dir.empty()) resolved.spec_dir = spec_file.parent_path();
  return CompiledPipeline(parse_spec(read_text(spec_file)), resolved);
}

}  // namespace harmony::pipeline
