#pragma once

#include <charconv>
#include <string>
#include <string_view>

namespace hil {

// Shortest round-trip decimal form; identical output for identical bits.
inline std::string csv_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return {buf, res.ptr};
}

// RFC 4180 quoting when the field needs it.
inline std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace hil
