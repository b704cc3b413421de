#include <algorithm>
#include <cctype>
#include <cstdio>

#include "harmony/rdf.hpp"

namespace harmony::rdf {

namespace {

void append_uchar(std::string& out, unsigned char c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "\\u%04X", c);
  out += buf;
}

std::string escape_iri(std::string_view iri) {
  std::string out;
  out.reserve(iri.size());
  for (unsigned char c : iri) {
    if (c <= 0x20 || c == '<' || c == '>' || c == '"' || c == '{' || c == '}' || c == '|' || c == '^' ||
        c == '`' || c == '\\') {
      append_uchar(out, c);
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::string escape_literal(std::string_view lexical) {
  std::string out;
  out.reserve(lexical.size() + 2);
  for (unsigned char c : lexical) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      default:
        if (c < 0x20 || c == 0x7F) {
          append_uchar(out, c);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

void append_utf8(std::string& out, unsigned long cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no) : s_(line), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::SyntaxError, "line " + std::to_string(line_no_) + ", column " + std::to_string(pos_ + 1) +
                                       ": " + what);
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }

  Term iri() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '_') fail("blank nodes are not supported");
    if (pos_ >= s_.size() || s_[pos_] != '<') fail("expected '<'");
    ++pos_;
    std::string value;
    while (true) {
      if (pos_ >= s_.size()) fail("unterminated IRI");
      const char c = s_[pos_++];
      if (c == '>') break;
      if (c == '\\') {
        value_escape(value, false);
      } else if (static_cast<unsigned char>(c) <= 0x20 || c == '<' || c == '"') {
        fail("illegal character in IRI");
      } else {
        value.push_back(c);
      }
    }
    if (!is_absolute_iri(value)) fail("relative IRI <" + value + ">");
    return Term::iri(std::move(value));
  }

  Term object() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '"') return literal();
    return iri();
  }

  void dot() {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != '.') fail("expected '.'");
    ++pos_;
    if (!at_end_or_comment()) fail("trailing content after '.'");
  }

 private:
  Term literal() {
    ++pos_;  // opening quote
    std::string lexical;
    while (true) {
      if (pos_ >= s_.size()) fail("unterminated literal");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        value_escape(lexical, true);
      } else if (c == '\n' || c == '\r') {
        fail("raw newline in literal");
      } else {
        lexical.push_back(c);
      }
    }
    if (pos_ < s_.size() && s_[pos_] == '@') {
      ++pos_;
      const auto start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '-')) ++pos_;
      if (pos_ == start) fail("empty language tag");
      return Term::lang_literal(std::move(lexical), std::string(s_.substr(start, pos_ - start)));
    }
    if (s_.substr(pos_, 2) == "^^") {
      pos_ += 2;
      Term dt = iri();
      if (dt.value() == kLangString) fail("rdf:langString requires a language tag");
      return Term::literal(std::move(lexical), dt.value());
    }
    return Term::literal(std::move(lexical));
  }

  void value_escape(std::string& out, bool allow_echar) {
    if (pos_ >= s_.size()) fail("dangling escape");
    const char e = s_[pos_++];
    if (e == 'u' || e == 'U') {
      const std::size_t n = e == 'u' ? 4 : 8;
      if (pos_ + n > s_.size()) fail("truncated unicode escape");
      unsigned long cp = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const char h = s_[pos_ + i];
        cp <<= 4;
        if (h >= '0' && h <= '9') cp |= static_cast<unsigned long>(h - '0');
        else if (h >= 'a' && h <= 'f') cp |= static_cast<unsigned long>(h - 'a' + 10);
        else if (h >= 'A' && h <= 'F') cp |= static_cast<unsigned long>(h - 'A' + 10);
        else fail("bad hex digit in unicode escape");
      }
      pos_ += n;
      if (cp > 0x10FFFF) fail("code point out of range");
      append_utf8(out, cp);
      return;
    }
    if (!allow_echar) fail("only \\u and \\U escapes are allowed in IRIs");
    switch (e) {
      case 't': out.push_back('\t'); break;
      case 'b': out.push_back('\b'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 'f': out.push_back('\f'); break;
      case '"': out.push_back('"'); break;
      case '\'': out.push_back('\''); break;
      case '\\': out.push_back('\\'); break;
      default: fail(std::string("unknown escape \\") + e);
    }
  }

  std::string_view s_;
  std::size_t line_no_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Term::to_ntriples() const {
  if (is_iri()) return "<" + escape_iri(value_) + ">";
  std::string out = "\"" + escape_literal(value_) + "\"";
  if (!lang_.empty()) return out + "@" + lang_;
  if (datatype_ != kXsdString) out += "^^<" + escape_iri(datatype_) + ">";
  return out;
}

std::string Triple::to_ntriples() const {
  return subject.to_ntriples() + " " + predicate.to_ntriples() + " " + object.to_ntriples() + " .";
}

std::string serialize_ntriples(const Graph& g) {
  std::vector<std::string> lines;
  lines.reserve(g.size());
  for (const auto& t : g) lines.push_back(t.to_ntriples());
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

Graph parse_ntriples(std::string_view text) {
  Graph g;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    LineParser p(line, line_no);
    if (!p.at_end_or_comment()) {
      Term s = p.iri();
      Term pred = p.iri();
      Term o = p.object();
      p.dot();
      g.insert(Triple(std::move(s), std::move(pred), std::move(o)));
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return g;
}

}  // namespace harmony::rdf
