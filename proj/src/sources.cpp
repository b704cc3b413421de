#include <expat.h>

#include <nlohmann/json.hpp>

#include "harmony/csv.hpp"
#include "harmony/mapping.hpp"

namespace harmony::lift {

struct XmlElement {
  std::string name;
  std::map<std::string, std::string> attributes;
  std::vector<std::unique_ptr<XmlElement>> children;
  std::string text;
};

struct CsvRow {
  std::vector<std::string> values;
};

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

// "a.b[0].c" -> steps {"a"}, {"b"}, {0}, {"c"}.
struct JsonStep {
  std::string key;
  std::optional<std::size_t> index;
  bool wildcard = false;
};

std::optional<std::vector<JsonStep>> parse_json_path(std::string_view path) {
  std::vector<JsonStep> steps;
  if (path == "$" || path.empty()) return steps;
  if (path.substr(0, 2) == "$.") path.remove_prefix(2);
  for (auto part : split(path, '.')) {
    const auto bracket = part.find('[');
    const auto key = part.substr(0, bracket);
    if (!key.empty()) steps.push_back({std::string(key), std::nullopt, false});
    else if (bracket == std::string_view::npos) return std::nullopt;
    auto rest = bracket == std::string_view::npos ? std::string_view{} : part.substr(bracket);
    while (!rest.empty()) {
      if (rest.front() != '[') return std::nullopt;
      const auto close = rest.find(']');
      if (close == std::string_view::npos) return std::nullopt;
      const auto inner = rest.substr(1, close - 1);
      JsonStep step;
      if (inner == "*") {
        step.wildcard = true;
      } else {
        if (inner.empty()) return std::nullopt;
        std::size_t n = 0;
        for (char c : inner) {
          if (c < '0' || c > '9') return std::nullopt;
          n = n * 10 + static_cast<std::size_t>(c - '0');
        }
        step.index = n;
      }
      steps.push_back(std::move(step));
      rest.remove_prefix(close + 1);
    }
  }
  return steps;
}

const json* walk_json(const json* node, const std::vector<JsonStep>& steps, std::size_t count) {
  for (std::size_t i = 0; i < count && node != nullptr; ++i) {
    const auto& step = steps[i];
    if (step.index) {
      node = node->is_array() && *step.index < node->size() ? &(*node)[*step.index] : nullptr;
    } else if (!step.key.empty()) {
      if (!node->is_object()) return nullptr;
      auto it = node->find(step.key);
      node = it == node->end() ? nullptr : &*it;
    } else {
      return nullptr;
    }
  }
  return node;
}

std::optional<std::string> json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return format_number(v.get<double>());
  return std::nullopt;
}

const XmlElement* xml_child(const XmlElement* e, std::string_view name) {
  for (const auto& c : e->children) {
    if (c->name == name) return c.get();
  }
  return nullptr;
}

struct XmlBuilder {
  std::unique_ptr<XmlElement> root;
  std::vector<XmlElement*> stack;
  std::string error;

  static void on_start(void* data, const XML_Char* name, const XML_Char** attrs) {
    auto* self = static_cast<XmlBuilder*>(data);
    auto element = std::make_unique<XmlElement>();
    element->name = name;
    for (int i = 0; attrs[i] != nullptr; i += 2) element->attributes[attrs[i]] = attrs[i + 1];
    XmlElement* raw = element.get();
    if (self->stack.empty()) {
      self->root = std::move(element);
    } else {
      self->stack.back()->children.push_back(std::move(element));
    }
    self->stack.push_back(raw);
  }

  static void on_end(void* data, const XML_Char*) { static_cast<XmlBuilder*>(data)->stack.pop_back(); }

  static void on_text(void* data, const XML_Char* s, int len) {
    auto* self = static_cast<XmlBuilder*>(data);
    if (!self->stack.empty()) self->stack.back()->text.append(s, static_cast<std::size_t>(len));
  }
};

std::unique_ptr<XmlElement> parse_xml(std::string_view text) {
  XmlBuilder builder;
  std::unique_ptr<XML_ParserStruct, decltype(&XML_ParserFree)> parser(XML_ParserCreate(nullptr), &XML_ParserFree);
  XML_SetUserData(parser.get(), &builder);
  XML_SetElementHandler(parser.get(), &XmlBuilder::on_start, &XmlBuilder::on_end);
  XML_SetCharacterDataHandler(parser.get(), &XmlBuilder::on_text);
  if (XML_Parse(parser.get(), text.data(), static_cast<int>(text.size()), 1) == XML_STATUS_ERROR) {
    throw Error(Errc::SourceSyntaxError, "XML: " + std::string(XML_ErrorString(XML_GetErrorCode(parser.get()))) +
                                             " at line " + std::to_string(XML_GetCurrentLineNumber(parser.get())));
  }
  return std::move(builder.root);
}

}  // namespace

struct ParsedSource {
  SourceFormat format = SourceFormat::Csv;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
  json document;
  std::unique_ptr<XmlElement> xml;
};

std::optional<std::string> Record::get(std::string_view reference) const {
  switch (doc_->format) {
    case SourceFormat::Csv: {
      const auto* row = static_cast<const CsvRow*>(node_);
      for (std::size_t i = 0; i < doc_->header.size(); ++i) {
        if (doc_->header[i] == reference) {
          if (i < row->values.size()) return row->values[i];
          return std::nullopt;
        }
      }
      return std::nullopt;
    }
    case SourceFormat::Json: {
      const auto steps = parse_json_path(reference);
      if (!steps) return std::nullopt;
      for (const auto& s : *steps) {
        if (s.wildcard) return std::nullopt;
      }
      const auto* v = walk_json(static_cast<const json*>(node_), *steps, steps->size());
      if (v == nullptr) return std::nullopt;
      return json_scalar(*v);
    }
    case SourceFormat::Xml: {
      const auto* e = static_cast<const XmlElement*>(node_);
      if (reference == "." || reference.empty()) return std::string(trim(e->text));
      const auto parts = split(reference, '/');
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto part = parts[i];
        if (!part.empty() && part.front() == '@') {
          if (i + 1 != parts.size()) return std::nullopt;
          auto it = e->attributes.find(std::string(part.substr(1)));
          if (it == e->attributes.end()) return std::nullopt;
          return it->second;
        }
        e = xml_child(e, part);
        if (e == nullptr) return std::nullopt;
      }
      return std::string(trim(e->text));
    }
  }
  return std::nullopt;
}

std::vector<Record> iterate(std::string_view source, SourceFormat format, std::string_view iterator) {
  auto doc = std::make_shared<ParsedSource>();
  doc->format = format;
  std::vector<const void*> nodes;
  if (trim(source).empty()) return {};

  switch (format) {
    case SourceFormat::Csv: {
      auto rows = csv::parse(source);
      if (rows.empty()) return {};
      doc->header = std::move(rows.front());
      for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() == 1 && rows[i][0].empty()) continue;
        doc->rows.push_back({std::move(rows[i])});
      }
      for (const auto& r : doc->rows) nodes.push_back(&r);
      break;
    }
    case SourceFormat::Json: {
      try {
        doc->document = json::parse(source);
      } catch (const json::parse_error& e) {
        throw Error(Errc::SourceSyntaxError, std::string("JSON: ") + e.what());
      }
      const auto steps = parse_json_path(iterator);
      if (!steps) throw Error(Errc::IteratorNotFound, "malformed JSON iterator '" + std::string(iterator) + "'");
      const bool wildcard = !steps->empty() && steps->back().wildcard;
      for (std::size_t i = 0; i + (wildcard ? 1 : 0) < steps->size(); ++i) {
        if ((*steps)[i].wildcard) {
          throw Error(Errc::IteratorNotFound, "'[*]' is only allowed at the end of iterator '" + std::string(iterator) + "'");
        }
      }
      const auto* base = walk_json(&doc->document, *steps, steps->size() - (wildcard ? 1 : 0));
      if (base == nullptr) throw Error(Errc::IteratorNotFound, "JSON iterator '" + std::string(iterator) + "' selects nothing");
      if (wildcard) {
        if (!base->is_array()) {
          throw Error(Errc::IteratorNotFound, "JSON iterator '" + std::string(iterator) + "' does not select an array");
        }
        for (const auto& item : *base) nodes.push_back(&item);
      } else {
        nodes.push_back(base);
      }
      break;
    }
    case SourceFormat::Xml: {
      doc->xml = parse_xml(source);
      auto path = iterator;
      if (path.empty() || path.front() != '/') {
        throw Error(Errc::IteratorNotFound, "XML iterator must be an absolute path: '" + std::string(iterator) + "'");
      }
      path.remove_prefix(1);
      const auto parts = split(path, '/');
      if (parts.empty() || parts.front() != doc->xml->name) {
        throw Error(Errc::IteratorNotFound, "XML iterator '" + std::string(iterator) + "' does not match root <" +
                                                doc->xml->name + ">");
      }
      std::vector<const XmlElement*> level{doc->xml.get()};
      for (std::size_t i = 1; i < parts.size(); ++i) {
        std::vector<const XmlElement*> next;
        for (const auto* e : level) {
          for (const auto& c : e->children) {
            if (c->name == parts[i]) next.push_back(c.get());
          }
        }
        level = std::move(next);
      }
      for (const auto* e : level) nodes.push_back(e);
      break;
    }
  }

  std::vector<Record> records;
  records.reserve(nodes.size());
  std::shared_ptr<const ParsedSource> shared = doc;
  for (const auto* n : nodes) records.emplace_back(shared, n);
  return records;
}

}  // namespace harmony::lift
