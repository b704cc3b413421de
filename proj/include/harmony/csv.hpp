#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace harmony::csv {

using Row = std::vector<std::string>;

// RFC 4180 reader. Accepts LF or CRLF line endings and a missing final line
// break. Throws SourceSyntaxError on an unterminated quoted field or text after
// a closing quote.
std::vector<Row> parse(std::string_view text);

// Quotes the field when it contains a comma, quote, CR or LF.
std::string escape_field(std::string_view field);

std::string format_row(const Row& row);

}  // namespace harmony::csv
