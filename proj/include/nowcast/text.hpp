#pragma once

#include <map>
#include <optional>
#include <string>

namespace nowcast {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);
/// format_number, or "NA" for an undefined value or NaN.
std::string format_optional(const std::optional<double>& v);

/// Parses "key=value" lines; blank lines are skipped. Throws FormatError
/// naming `who` on a malformed line.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& who);
/// Looks up an unsigned integer; throws FormatError when absent or malformed.
std::size_t key_size(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& who);

}  // namespace nowcast
