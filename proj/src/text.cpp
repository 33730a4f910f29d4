#include "nowcast/text.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "nowcast/errors.hpp"

namespace nowcast {

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_optional(const std::optional<double>& v) {
  return v && !std::isnan(*v) ? format_number(*v) : "NA";
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& who) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(who + ": line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::size_t key_size(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& who) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(who + ": missing " + key);
  std::size_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError(who + ": bad value for " + key + ": " + s);
  return v;
}

}  // namespace nowcast
