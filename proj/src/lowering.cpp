#include "harmony/lowering.hpp"

#include <cstdio>
#include <map>

#include "harmony/csv.hpp"

namespace harmony::lower {

namespace {

bool is_ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool is_ident(char c) { return is_ident_start(c) || (c >= '0' && c <= '9') || c == '-'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

class Locator {
 public:
  explicit Locator(std::string_view text) : text_(text) {}

  Position at(std::size_t offset) const {
    Position p;
    for (std::size_t i = 0; i < offset && i < text_.size(); ++i) {
      if (text_[i] == '\n') {
        ++p.line;
        p.column = 1;
      } else {
        ++p.column;
      }
    }
    return p;
  }

  [[noreturn]] void fail(std::size_t offset, const std::string& msg, Errc code = Errc::TemplateSyntaxError) const {
    const auto p = at(offset);
    throw Error(code, "line " + std::to_string(p.line) + ", column " + std::to_string(p.column) + ": " + msg);
  }

 private:
  std::string_view text_;
};

// Tokens of a query directive.
struct QToken {
  enum Kind { Var, Iri, Name, String, Number, Dot, Op, End } kind = End;
  std::string text;
  std::string datatype;  // for String tokens with ^^
  std::string lang;
  std::size_t offset = 0;
};

class QueryLexer {
 public:
  QueryLexer(std::string_view s, std::size_t base, const Locator& loc) : s_(s), base_(base), loc_(loc) {}

  std::vector<QToken> run() {
    std::vector<QToken> out;
    while (true) {
      while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
      QToken t;
      t.offset = base_ + pos_;
      if (pos_ >= s_.size()) {
        out.push_back(t);
        return out;
      }
      const char c = s_[pos_];
      if (c == '?') {
        ++pos_;
        t.kind = QToken::Var;
        t.text = ident();
        if (t.text.empty()) fail("expected a variable name after '?'");
      } else if (c == '<' && pos_ + 1 < s_.size() && s_[pos_ + 1] != '=' && !is_space(s_[pos_ + 1])) {
        const auto close = s_.find('>', pos_);
        if (close == std::string_view::npos) fail("unterminated IRI");
        t.kind = QToken::Iri;
        t.text = std::string(s_.substr(pos_ + 1, close - pos_ - 1));
        pos_ = close + 1;
      } else if (c == '<' || c == '>' || c == '=' || c == '!') {
        t.kind = QToken::Op;
        t.text = std::string(1, c);
        ++pos_;
        if (pos_ < s_.size() && s_[pos_] == '=') {
          t.text += '=';
          ++pos_;
        }
        if (t.text == "!") fail("expected '!='");
      } else if (c == '"') {
        t.kind = QToken::String;
        ++pos_;
        while (true) {
          if (pos_ >= s_.size()) fail("unterminated string");
          const char d = s_[pos_++];
          if (d == '"') break;
          if (d == '\\' && pos_ < s_.size()) {
            t.text.push_back(s_[pos_++]);
          } else {
            t.text.push_back(d);
          }
        }
        if (s_.substr(pos_, 2) == "^^") {
          pos_ += 2;
          t.datatype = word();
          if (t.datatype.empty()) fail("expected a datatype after '^^'");
        } else if (pos_ < s_.size() && s_[pos_] == '@') {
          ++pos_;
          t.lang = ident();
        }
      } else if (c == '.') {
        t.kind = QToken::Dot;
        ++pos_;
      } else if ((c >= '0' && c <= '9') || c == '-' || c == '+') {
        t.kind = QToken::Number;
        t.text = word();
        if (!rdf::parse_number(t.text)) fail("malformed number '" + t.text + "'");
      } else if (is_ident_start(c)) {
        t.kind = QToken::Name;
        t.text = word();
      } else {
        fail(std::string("unexpected character '") + c + "'");
      }
      out.push_back(std::move(t));
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { loc_.fail(base_ + pos_, msg); }

  std::string ident() {
    const auto start = pos_;
    while (pos_ < s_.size() && is_ident(s_[pos_])) ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }

  // A CURIE, keyword or number: runs to whitespace. A trailing '.' is left
  // for the pattern separator.
  std::string word() {
    if (pos_ < s_.size() && s_[pos_] == '<') {
      const auto close = s_.find('>', pos_);
      if (close == std::string_view::npos) fail("unterminated IRI");
      auto w = "<" + std::string(s_.substr(pos_ + 1, close - pos_ - 1)) + ">";
      pos_ = close + 1;
      return w;
    }
    const auto start = pos_;
    while (pos_ < s_.size() && !is_space(s_[pos_])) ++pos_;
    while (pos_ > start + 1 && s_[pos_ - 1] == '.') --pos_;
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string_view s_;
  std::size_t base_;
  const Locator& loc_;
  std::size_t pos_ = 0;
};

class QueryParser {
 public:
  QueryParser(std::vector<QToken> tokens, const rdf::PrefixMap& prefixes, const Locator& loc)
      : t_(std::move(tokens)), prefixes_(prefixes), loc_(loc) {}

  rdf::Query run() {
    rdf::Query q;
    while (true) {
      rdf::TriplePattern p{subject_or_predicate(false), subject_or_predicate(true), object()};
      q.patterns.push_back(std::move(p));
      if (peek().kind == QToken::Dot) {
        ++i_;
        if (peek().kind == QToken::End || is_keyword("filter") || is_keyword("order")) break;
        continue;
      }
      break;
    }
    while (is_keyword("filter")) {
      ++i_;
      const auto& v = take(QToken::Var, "expected a variable after 'filter'");
      const auto& op = take(QToken::Op, "expected a comparison operator");
      rdf::Filter f;
      f.variable = v.text;
      f.op = op_of(op);
      const auto& c = peek();
      if (c.kind == QToken::String || c.kind == QToken::Number) {
        f.constant = literal_of(c);
      } else if (c.kind == QToken::Iri || c.kind == QToken::Name) {
        f.constant = rdf::Term::iri(expand(c));
      } else {
        loc_.fail(c.offset, "expected a constant after the operator");
      }
      ++i_;
      q.filters.push_back(std::move(f));
    }
    if (is_keyword("order")) {
      ++i_;
      if (!is_keyword("by")) loc_.fail(peek().offset, "expected 'by' after 'order'");
      ++i_;
      q.order_by = take(QToken::Var, "expected a variable after 'order by'").text;
    }
    if (peek().kind != QToken::End) loc_.fail(peek().offset, "unexpected '" + peek().text + "' in query");
    return q;
  }

 private:
  const QToken& peek() const { return t_[i_]; }
  bool is_keyword(std::string_view k) const { return peek().kind == QToken::Name && peek().text == k; }

  const QToken& take(QToken::Kind kind, const std::string& msg) {
    if (peek().kind != kind) loc_.fail(peek().offset, msg);
    return t_[i_++];
  }

  std::string expand(const QToken& t) {
    try {
      if (t.kind == QToken::Iri) return prefixes_.expand("<" + t.text + ">");
      return prefixes_.expand(t.text);
    } catch (const Error& e) {
      loc_.fail(t.offset, e.what(), e.code());
    }
  }

  rdf::Term literal_of(const QToken& t) {
    if (t.kind == QToken::Number) {
      const bool integral = t.text.find_first_of(".eE") == std::string::npos;
      return rdf::Term::literal(t.text, integral ? rdf::kXsdInteger : rdf::kXsdDecimal);
    }
    if (!t.lang.empty()) return rdf::Term::lang_literal(t.text, t.lang);
    if (!t.datatype.empty()) {
      QToken dt;
      dt.offset = t.offset;
      if (t.datatype.front() == '<') {
        dt.kind = QToken::Iri;
        dt.text = t.datatype.substr(1, t.datatype.size() - 2);
      } else {
        dt.kind = QToken::Name;
        dt.text = t.datatype;
      }
      return rdf::Term::literal(t.text, expand(dt));
    }
    return rdf::Term::literal(t.text);
  }

  rdf::PatternTerm subject_or_predicate(bool predicate) {
    const auto& t = peek();
    ++i_;
    if (t.kind == QToken::Var) return rdf::Variable{t.text};
    if (predicate && t.kind == QToken::Name && t.text == "a") return rdf::Term::iri(rdf::kRdfType);
    if (t.kind == QToken::Iri || t.kind == QToken::Name) return rdf::Term::iri(expand(t));
    loc_.fail(t.offset, predicate ? "expected a predicate" : "expected a subject");
  }

  rdf::PatternTerm object() {
    const auto& t = peek();
    if (t.kind == QToken::String || t.kind == QToken::Number) {
      ++i_;
      return literal_of(t);
    }
    return subject_or_predicate(false);
  }

  rdf::CompareOp op_of(const QToken& t) {
    static const std::map<std::string, rdf::CompareOp> ops{{"=", rdf::CompareOp::Eq},  {"!=", rdf::CompareOp::Ne},
                                                           {"<", rdf::CompareOp::Lt},  {"<=", rdf::CompareOp::Le},
                                                           {">", rdf::CompareOp::Gt},  {">=", rdf::CompareOp::Ge}};
    auto it = ops.find(t.text);
    if (it == ops.end()) loc_.fail(t.offset, "unknown operator '" + t.text + "'");
    return it->second;
  }

  std::vector<QToken> t_;
  std::size_t i_ = 0;
  const rdf::PrefixMap& prefixes_;
  const Locator& loc_;
};

struct Scope {
  std::string loop_var;
  const NamedQuery* query;
};

class TemplateParser {
 public:
  explicit TemplateParser(std::string_view text) : s_(text), loc_(text) {}

  Template run() {
    tpl_.prefixes = rdf::PrefixMap::with_defaults();
    parse_output();
    parse_header();
    std::vector<Node> body;
    const bool closed = parse_body(body, {});
    if (closed) loc_.fail(last_directive_, "'end' without an open 'for'");
    tpl_.body = std::move(body);
    return std::move(tpl_);
  }

 private:
  struct Directive {
    std::string_view content;
    std::size_t start = 0;          // offset of "{%"
    std::size_t content_start = 0;  // offset of the trimmed content
  };

  // Reads a directive at pos_ (which must point at "{%"), applying the
  // trailing-newline rule.
  Directive read_directive() {
    Directive d;
    d.start = pos_;
    const auto close = s_.find("%}", pos_ + 2);
    if (close == std::string_view::npos) loc_.fail(pos_, "unterminated '{%'");
    const auto raw = s_.substr(pos_ + 2, close - pos_ - 2);
    d.content = trim(raw);
    d.content_start = pos_ + 2 + (d.content.empty() ? 0 : static_cast<std::size_t>(d.content.data() - raw.data()));
    pos_ = close + 2;
    if (s_.substr(pos_, 2) == "\r\n") pos_ += 2;
    else if (pos_ < s_.size() && s_[pos_] == '\n') ++pos_;
    last_directive_ = d.start;
    return d;
  }

  static std::string_view keyword(std::string_view content) {
    std::size_t n = 0;
    while (n < content.size() && is_ident(content[n])) ++n;
    return content.substr(0, n);
  }

  void parse_output() {
    if (s_.substr(0, 2) != "{%") loc_.fail(0, "a template must start with {% output json %} or {% output csv %}");
    const auto d = read_directive();
    if (keyword(d.content) != "output") loc_.fail(d.content_start, "the first directive must be 'output'");
    const auto arg = trim(d.content.substr(6));
    if (arg == "json") tpl_.format = OutputFormat::Json;
    else if (arg == "csv") tpl_.format = OutputFormat::Csv;
    else loc_.fail(d.content_start, "output format must be 'json' or 'csv'");
  }

  void parse_header() {
    while (true) {
      auto p = pos_;
      while (p < s_.size() && is_space(s_[p])) ++p;
      if (s_.substr(p, 2) != "{%") return;
      const auto save = pos_;
      pos_ = p;
      const auto kw = keyword(peek_content());
      if (kw != "prefix" && kw != "query") {
        pos_ = save;
        return;
      }
      const auto d = read_directive();
      if (kw == "prefix") parse_prefix(d);
      else parse_query(d);
    }
  }

  std::string_view peek_content() const {
    const auto close = s_.find("%}", pos_ + 2);
    if (close == std::string_view::npos) loc_.fail(pos_, "unterminated '{%'");
    return trim(s_.substr(pos_ + 2, close - pos_ - 2));
  }

  void parse_prefix(const Directive& d) {
    auto rest = trim(d.content.substr(6));
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) loc_.fail(d.content_start, "expected 'prefix name: <iri>'");
    const auto name = trim(rest.substr(0, colon));
    for (char c : name) {
      if (!is_ident(c)) loc_.fail(d.content_start, "bad prefix name '" + std::string(name) + "'");
    }
    const auto iri = trim(rest.substr(colon + 1));
    if (iri.size() < 2 || iri.front() != '<' || iri.back() != '>') {
      loc_.fail(d.content_start, "prefix namespace must be written <iri>");
    }
    const auto ns = std::string(iri.substr(1, iri.size() - 2));
    if (!rdf::is_absolute_iri(ns)) loc_.fail(d.content_start, "prefix namespace must be an absolute IRI");
    tpl_.prefixes.bind(std::string(name), ns);
  }

  void parse_query(const Directive& d) {
    const auto after_kw = d.content.substr(5);
    const auto colon = after_kw.find(':');
    if (colon == std::string_view::npos) loc_.fail(d.content_start, "expected 'query name: patterns'");
    const auto name = std::string(trim(after_kw.substr(0, colon)));
    if (name.empty() || !is_ident_start(name.front())) loc_.fail(d.content_start, "bad query name '" + name + "'");
    for (char c : name) {
      if (!is_ident(c)) loc_.fail(d.content_start, "bad query name '" + name + "'");
    }
    if (tpl_.find_query(name) != nullptr) loc_.fail(d.content_start, "query '" + name + "' declared twice");
    const auto body = after_kw.substr(colon + 1);
    const auto base = d.content_start + 5 + colon + 1;
    QueryLexer lexer(body, base, loc_);
    QueryParser parser(lexer.run(), tpl_.prefixes, loc_);
    auto q = parser.run();
    try {
      q.check();
    } catch (const Error& e) {
      loc_.fail(d.content_start, e.what(), e.code());
    }
    tpl_.queries.push_back({name, std::move(q)});
  }

  // Parses until end of input (returns false) or a matching {% end %}
  // (returns true).
  bool parse_body(std::vector<Node>& out, std::vector<Scope> scopes) {
    std::string text;
    auto flush = [&] {
      if (!text.empty()) out.emplace_back(TextNode{std::move(text)});
      text.clear();
    };
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '{' && s_.substr(pos_, 2) == "{%") {
        const auto start = pos_;
        const auto d = read_directive();
        const auto kw = keyword(d.content);
        if (kw == "end") {
          if (trim(d.content.substr(3)).size() != 0) loc_.fail(d.content_start, "'end' takes no arguments");
          flush();
          return true;
        }
        if (kw == "for") {
          flush();
          out.emplace_back(parse_for(d, scopes));
          continue;
        }
        if (kw == "query" || kw == "prefix") {
          loc_.fail(start, "'" + std::string(kw) + "' directives must precede the template body");
        }
        if (kw == "output") loc_.fail(start, "duplicate 'output' directive");
        loc_.fail(d.content_start, "unknown directive '" + std::string(kw) + "'");
      }
      if (c == '$' && (s_.substr(pos_, 2) == "${" || s_.substr(pos_, 3) == "$!{")) {
        flush();
        out.emplace_back(parse_interpolation(scopes));
        continue;
      }
      text.push_back(c);
      ++pos_;
    }
    flush();
    return false;
  }

  std::unique_ptr<ForNode> parse_for(const Directive& d, std::vector<Scope> scopes) {
    auto node = std::make_unique<ForNode>();
    node->at = loc_.at(d.start);
    QueryLexer lexer(d.content.substr(3), d.content_start + 3, loc_);
    const auto toks = lexer.run();
    if (toks.size() < 4 || toks[0].kind != QToken::Name || toks[1].kind != QToken::Name || toks[1].text != "in" ||
        toks[2].kind != QToken::Name) {
      loc_.fail(d.content_start, "expected 'for <var> in <query> [sep \"...\"]'");
    }
    node->loop_var = toks[0].text;
    node->query = toks[2].text;
    std::size_t i = 3;
    if (toks[i].kind == QToken::Name && toks[i].text == "sep") {
      if (toks[i + 1].kind != QToken::String) loc_.fail(toks[i + 1].offset, "expected a string after 'sep'");
      node->separator = toks[i + 1].text;
      i += 2;
    }
    if (toks[i].kind != QToken::End) loc_.fail(toks[i].offset, "unexpected '" + toks[i].text + "' in for");
    const auto* q = tpl_.find_query(node->query);
    if (q == nullptr) loc_.fail(toks[2].offset, "no query named '" + node->query + "'", Errc::UnknownQuery);
    scopes.push_back({node->loop_var, q});
    if (!parse_body(node->body, scopes)) loc_.fail(d.start, "'for' without a matching 'end'");
    return node;
  }

  InterpolationNode parse_interpolation(const std::vector<Scope>& scopes) {
    InterpolationNode n;
    const auto start = pos_;
    n.at = loc_.at(start);
    n.raw = s_[pos_ + 1] == '!';
    pos_ += n.raw ? 3 : 2;
    const auto close = s_.find('}', pos_);
    if (close == std::string_view::npos) loc_.fail(start, "unterminated interpolation");
    const auto inner = trim(s_.substr(pos_, close - pos_));
    pos_ = close + 1;
    const auto dot = inner.find('.');
    if (dot == std::string_view::npos) {
      loc_.fail(start, "interpolation must be written ${loop.variable}", Errc::UnboundTemplateVariable);
    }
    n.loop_var = std::string(inner.substr(0, dot));
    n.variable = std::string(inner.substr(dot + 1));
    if (n.variable.size() > 1 && n.variable.front() == '?') n.variable.erase(0, 1);
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
      if (it->loop_var != n.loop_var) continue;
      if (it->query->query.variables().count(n.variable) == 0) {
        loc_.fail(start, "query '" + it->query->name + "' has no variable ?" + n.variable,
                  Errc::UnboundTemplateVariable);
      }
      return n;
    }
    loc_.fail(start, "'" + n.loop_var + "' is not bound by an enclosing for", Errc::UnboundTemplateVariable);
  }

  std::string_view s_;
  Locator loc_;
  std::size_t pos_ = 0;
  std::size_t last_directive_ = 0;
  Template tpl_;
};

void count(const std::vector<Node>& nodes, TemplateStats& s) {
  for (const auto& n : nodes) {
    if (std::holds_alternative<TextNode>(n)) ++s.text_chunks;
    else if (std::holds_alternative<InterpolationNode>(n)) ++s.interpolations;
    else {
      ++s.for_blocks;
      count(std::get<std::unique_ptr<ForNode>>(n)->body, s);
    }
  }
}

class Renderer {
 public:
  Renderer(const Template& t, const rdf::Graph& g) : t_(t), g_(g) {}

  std::string run() {
    render(t_.body);
    return std::move(out_);
  }

 private:
  struct Frame {
    std::string loop_var;
    const rdf::Binding* binding;
  };

  void render(const std::vector<Node>& nodes) {
    for (const auto& n : nodes) {
      if (const auto* text = std::get_if<TextNode>(&n)) {
        out_ += text->text;
      } else if (const auto* i = std::get_if<InterpolationNode>(&n)) {
        interpolate(*i);
      } else {
        loop(*std::get<std::unique_ptr<ForNode>>(n));
      }
    }
  }

  void loop(const ForNode& f) {
    const auto* q = t_.find_query(f.query);
    rdf::Binding seed;
    const auto vars = q->query.variables();
    for (const auto& frame : frames_) {
      for (const auto& [k, v] : *frame.binding) {
        if (vars.count(k)) seed[k] = v;
      }
    }
    const auto rows = rdf::match(g_, q->query, seed);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r > 0) out_ += f.separator;
      frames_.push_back({f.loop_var, &rows[r]});
      render(f.body);
      frames_.pop_back();
    }
  }

  void interpolate(const InterpolationNode& n) {
    const rdf::Term* term = nullptr;
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
      if (it->loop_var != n.loop_var) continue;
      auto v = it->binding->find(n.variable);
      if (v != it->binding->end()) term = &v->second;
      break;
    }
    if (term == nullptr) return;
    const auto& value = term->value();
    if (t_.format == OutputFormat::Json) {
      if (!n.raw) {
        out_ += json_escape(value);
      } else if (term->is_literal() && rdf::is_numeric_datatype(term->datatype()) && rdf::parse_number(value)) {
        out_ += value;
      } else {
        out_ += '"' + json_escape(value) + '"';
      }
    } else {
      out_ += n.raw ? value : csv::escape_field(value);
    }
  }

  const Template& t_;
  const rdf::Graph& g_;
  std::vector<Frame> frames_;
  std::string out_;
};

}  // namespace

std::string_view to_string(OutputFormat f) { return f == OutputFormat::Json ? "json" : "csv"; }

const NamedQuery* Template::find_query(std::string_view name) const {
  for (const auto& q : queries) {
    if (q.name == name) return &q;
  }
  return nullptr;
}

TemplateStats stats(const Template& t) {
  TemplateStats s;
  s.queries = t.queries.size();
  count(t.body, s);
  return s;
}

Template parse_template(std::string_view text) { return TemplateParser(text).run(); }

std::string render(const Template& t, const rdf::Graph& g) { return Renderer(t, g).run(); }

std::string json_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

}  // namespace harmony::lower
