#include <array>
#include <charconv>
#include <cmath>

#include "harmony/mapping.hpp"

namespace harmony::lift {

namespace {

struct Builtin {
  std::string_view name;
  std::size_t arity;
};

constexpr std::array<Builtin, 6> kBuiltins{{
    {"concat", 2},
    {"replace", 3},
    {"toUpper", 1},
    {"multiply", 2},
    {"geoPointWkt", 2},
    {"lookup", 2},
}};

double numeric_operand(std::string_view fn, const std::string& value) {
  const auto n = rdf::parse_number(value);
  if (!n) throw Error(Errc::NonNumericOperand, std::string(fn) + ": '" + value + "' is not a number");
  return *n;
}

}  // namespace

bool is_builtin(std::string_view name) {
  for (const auto& b : kBuiltins) {
    if (b.name == name) return true;
  }
  return false;
}

void check_builtin(std::string_view name, std::size_t arity) {
  for (const auto& b : kBuiltins) {
    if (b.name != name) continue;
    if (b.arity != arity) {
      throw Error(Errc::ArityError, std::string(name) + " takes " + std::to_string(b.arity) + " arguments, got " +
                                        std::to_string(arity));
    }
    return;
  }
  throw Error(Errc::UnknownFunction, "no builtin function named '" + std::string(name) + "'");
}

std::string format_number(double value) {
  if (value == 0) return "0";
  std::array<char, 64> buf{};
  const auto fmt = std::fabs(value) < 1e15 ? std::chars_format::fixed : std::chars_format::general;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, fmt);
  if (ec != std::errc()) return std::to_string(value);
  return std::string(buf.data(), ptr);
}

std::string encode_iri_component(std::string_view value) {
  static constexpr std::string_view kKeep =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~:/?#[]@!$&'()*+,;=";
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(value.size());
  for (unsigned char c : value) {
    // Non-ASCII bytes are kept: IRIs admit UTF-8 encoded ucschar directly.
    if (c >= 0x80 || kKeep.find(static_cast<char>(c)) != std::string_view::npos) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0x0F]);
    }
  }
  return out;
}

std::optional<std::string> call_builtin(std::string_view name, const std::vector<std::string>& args,
                                        const LookupSet& lookups) {
  check_builtin(name, args.size());
  if (name == "concat") return args[0] + args[1];
  if (name == "replace") {
    const auto& from = args[1];
    if (from.empty()) return args[0];
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const auto hit = args[0].find(from, pos);
      if (hit == std::string::npos) break;
      out.append(args[0], pos, hit - pos);
      out += args[2];
      pos = hit + from.size();
    }
    out.append(args[0], pos);
    return out;
  }
  if (name == "toUpper") {
    std::string out = args[0];
    for (auto& c : out) {
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    return out;
  }
  if (name == "multiply") {
    return format_number(numeric_operand(name, args[0]) * numeric_operand(name, args[1]));
  }
  if (name == "geoPointWkt") {
    numeric_operand(name, args[0]);
    numeric_operand(name, args[1]);
    return "POINT(" + args[1] + " " + args[0] + ")";
  }
  // lookup
  auto table = lookups.find(args[0]);
  if (table == lookups.end()) throw Error(Errc::LookupTableMissing, "lookup table '" + args[0] + "' is not registered");
  return table->second.find(args[1]);
}

}  // namespace harmony::lift
