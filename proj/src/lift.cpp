#include <unordered_map>

#include "harmony/mapping.hpp"

namespace harmony::lift {

namespace {

struct Evaluator {
  const LookupSet& lookups;

  // String value of a rule for one record; nullopt when suppressed. Template
  // placeholders are percent-encoded when `encode` is set (IRI minting).
  std::optional<std::string> text(const TermRule& rule, const Record& record, bool encode) const {
    if (const auto* t = std::get_if<TemplateRule>(&rule.body)) {
      std::string out;
      for (const auto& seg : t->segments) {
        if (!seg.placeholder) {
          out += seg.text;
          continue;
        }
        auto v = record.get(seg.text);
        if (!v || v->empty()) return std::nullopt;
        out += encode ? encode_iri_component(*v) : *v;
      }
      return out;
    }
    if (const auto* r = std::get_if<ReferenceRule>(&rule.body)) {
      auto v = record.get(r->path);
      if (!v || v->empty()) return std::nullopt;
      return v;
    }
    if (const auto* c = std::get_if<ConstantRule>(&rule.body)) return c->term.value();
    const auto& fn = std::get<FunctionRule>(rule.body);
    std::vector<std::string> args;
    args.reserve(fn.args.size());
    for (const auto& a : fn.args) {
      auto v = text(a, record, false);
      if (!v) return std::nullopt;
      args.push_back(std::move(*v));
    }
    auto result = call_builtin(fn.name, args, lookups);
    if (!result || result->empty()) return std::nullopt;
    return result;
  }

  std::optional<rdf::Term> term(const TermRule& rule, const Record& record) const {
    if (const auto* c = std::get_if<ConstantRule>(&rule.body)) return c->term;
    const bool iri = rule.term_type == rdf::Term::Kind::Iri;
    auto v = text(rule, record, iri && std::holds_alternative<TemplateRule>(rule.body));
    if (!v) return std::nullopt;
    if (iri) {
      if (!rdf::is_absolute_iri(*v)) return std::nullopt;
      return rdf::Term::iri(std::move(*v));
    }
    if (rule.lang) return rdf::Term::lang_literal(std::move(*v), *rule.lang);
    return rdf::Term::literal(std::move(*v), rule.datatype.value_or(rdf::kXsdString));
  }
};

class SourceCache {
 public:
  explicit SourceCache(const SourceSet& sources) : sources_(sources) {}

  const std::vector<Record>& records(const EntityMap& map) {
    auto it = cache_.find(map.name);
    if (it != cache_.end()) return it->second;
    auto src = sources_.find(map.source.source_name);
    if (src == sources_.end()) {
      throw Error(Errc::MissingSource, "map '" + map.name + "' needs source '" + map.source.source_name + "'");
    }
    return cache_.emplace(map.name, iterate(src->second, map.source.format, map.source.iterator)).first->second;
  }

 private:
  const SourceSet& sources_;
  std::unordered_map<std::string, std::vector<Record>> cache_;
};

}  // namespace

rdf::Graph lift(const LiftingMapping& mapping, const SourceSet& sources, const LookupSet& lookups) {
  Evaluator eval{lookups};
  SourceCache cache(sources);
  rdf::Graph g;
  const rdf::Term type = rdf::Term::iri(rdf::kRdfType);

  // (parent map, parent key) -> key value -> parent subjects
  std::map<std::pair<std::string, std::string>, std::unordered_map<std::string, std::vector<rdf::Term>>> join_index;
  auto parents_for = [&](const JoinRule& join) -> const std::unordered_map<std::string, std::vector<rdf::Term>>& {
    const auto key = std::make_pair(join.map, join.parent_key);
    if (auto it = join_index.find(key); it != join_index.end()) return it->second;
    const auto* parent = mapping.find(join.map);
    if (parent == nullptr) throw Error(Errc::DanglingJoin, "join names unknown map '" + join.map + "'");
    std::unordered_map<std::string, std::vector<rdf::Term>> index;
    for (const auto& rec : cache.records(*parent)) {
      auto k = rec.get(join.parent_key);
      if (!k || k->empty()) continue;
      if (auto subject = eval.term(parent->subject, rec)) index[*k].push_back(std::move(*subject));
    }
    return join_index.emplace(key, std::move(index)).first->second;
  };

  for (const auto& map : mapping.maps) {
    std::vector<rdf::Term> classes;
    for (const auto& t : map.types) classes.push_back(rdf::Term::iri(t));
    for (const auto& record : cache.records(map)) {
      auto subject = eval.term(map.subject, record);
      if (!subject) continue;
      for (const auto& cls : classes) g.insert(*subject, type, cls);
      for (const auto& prop : map.properties) {
        const auto predicate = rdf::Term::iri(prop.predicate);
        if (const auto* rule = std::get_if<TermRule>(&prop.value)) {
          if (auto object = eval.term(*rule, record)) g.insert(*subject, predicate, std::move(*object));
          continue;
        }
        const auto& join = std::get<JoinRule>(prop.value);
        auto child = record.get(join.child_key);
        if (!child || child->empty()) continue;
        const auto& index = parents_for(join);
        if (auto hit = index.find(*child); hit != index.end()) {
          for (const auto& parent_subject : hit->second) g.insert(*subject, predicate, parent_subject);
        }
      }
    }
  }
  return g;
}

}  // namespace harmony::lift
