#include <algorithm>

#include "harmony/rdf.hpp"

namespace harmony::rdf {

namespace {

// Resolves a pattern position against the current binding: a constant term,
// an already-bound variable, or an unbound variable name.
struct Slot {
  const Term* term = nullptr;
  const std::string* unbound = nullptr;
};

Slot resolve(const PatternTerm& p, const Binding& b) {
  if (const auto* t = std::get_if<Term>(&p)) return {t, nullptr};
  const auto& name = std::get<Variable>(p).name;
  if (auto it = b.find(name); it != b.end()) return {&it->second, nullptr};
  return {nullptr, &name};
}

bool unify(const Slot& slot, const Term& value, Binding& out) {
  if (slot.term != nullptr) return *slot.term == value;
  // The same variable may occur twice in one pattern.
  if (auto it = out.find(*slot.unbound); it != out.end()) return it->second == value;
  out.emplace(*slot.unbound, value);
  return true;
}

void extend(const Graph& g, const TriplePattern& pattern, const Binding& current, std::vector<Binding>& out) {
  const Slot s = resolve(pattern.subject, current);
  const Slot p = resolve(pattern.predicate, current);
  const Slot o = resolve(pattern.object, current);

  auto try_triple = [&](const Triple& t) {
    Binding next = current;
    if (unify(s, t.subject, next) && unify(p, t.predicate, next) && unify(o, t.object, next)) {
      out.push_back(std::move(next));
    }
  };

  if (s.term != nullptr) {
    if (!s.term->is_iri()) return;
    for (const auto& t : g.describe(*s.term)) try_triple(t);
  } else {
    for (const auto& t : g) try_triple(t);
  }
}

int compare_bindings(const Binding& a, const Binding& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end() && ib != b.end(); ++ia, ++ib) {
    if (int c = ia->first.compare(ib->first); c != 0) return c;
    if (int c = ia->second.value().compare(ib->second.value()); c != 0) return c;
  }
  if (ia != a.end()) return 1;
  if (ib != b.end()) return -1;
  // Same names and values; fall back to the full term order (kind, datatype).
  for (ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (auto c = ia->second <=> ib->second; c != 0) return c < 0 ? -1 : 1;
  }
  return 0;
}

}  // namespace

std::set<std::string> Query::variables() const {
  std::set<std::string> vars;
  for (const auto& tp : patterns) {
    for (const auto* pos : {&tp.subject, &tp.predicate, &tp.object}) {
      if (const auto* v = std::get_if<Variable>(pos)) vars.insert(v->name);
    }
  }
  return vars;
}

void Query::check() const {
  const auto vars = variables();
  for (const auto& f : filters) {
    if (vars.count(f.variable) == 0) {
      throw Error(Errc::UnboundVariable, "filter variable ?" + f.variable + " does not occur in any pattern");
    }
  }
  if (order_by && vars.count(*order_by) == 0) {
    throw Error(Errc::UnboundVariable, "order-by variable ?" + *order_by + " does not occur in any pattern");
  }
}

int compare_values(std::string_view a, std::string_view b) {
  const auto na = parse_number(a);
  const auto nb = parse_number(b);
  if (na && nb) {
    if (*na < *nb) return -1;
    if (*na > *nb) return 1;
    return 0;
  }
  if (na) return -1;
  if (nb) return 1;
  const int c = a.compare(b);
  return c < 0 ? -1 : (c > 0 ? 1 : 0);
}

bool apply_compare(CompareOp op, std::string_view lhs, std::string_view rhs) {
  int c = 0;
  const auto nl = parse_number(lhs);
  const auto nr = parse_number(rhs);
  if (nl && nr) {
    c = *nl < *nr ? -1 : (*nl > *nr ? 1 : 0);
  } else {
    const int raw = lhs.compare(rhs);
    c = raw < 0 ? -1 : (raw > 0 ? 1 : 0);
  }
  switch (op) {
    case CompareOp::Eq: return c == 0;
    case CompareOp::Ne: return c != 0;
    case CompareOp::Lt: return c < 0;
    case CompareOp::Le: return c <= 0;
    case CompareOp::Gt: return c > 0;
    case CompareOp::Ge: return c >= 0;
  }
  return false;
}

std::vector<Binding> match(const Graph& g, const Query& q, const Binding& seed) {
  q.check();
  std::vector<Binding> solutions{seed};
  for (const auto& pattern : q.patterns) {
    std::vector<Binding> next;
    for (const auto& current : solutions) extend(g, pattern, current, next);
    solutions = std::move(next);
    if (solutions.empty()) return {};
  }

  if (!q.filters.empty()) {
    std::erase_if(solutions, [&](const Binding& b) {
      return !std::all_of(q.filters.begin(), q.filters.end(), [&](const Filter& f) {
        return apply_compare(f.op, b.at(f.variable).value(), f.constant.value());
      });
    });
  }

  std::sort(solutions.begin(), solutions.end(), [&](const Binding& a, const Binding& b) {
    if (q.order_by) {
      if (int c = compare_values(a.at(*q.order_by).value(), b.at(*q.order_by).value()); c != 0) return c < 0;
    }
    return compare_bindings(a, b) < 0;
  });
  return solutions;
}

}  // namespace harmony::rdf
