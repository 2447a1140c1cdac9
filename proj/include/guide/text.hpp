#pragma once

#include <map>
#include <string>

namespace guide {

// Round-trippable decimal formatting (%.17g, period separator).
std::string format_double(double v);

std::string trim(std::string s);

// Parses "key = value" lines; '#' starts a comment. Section headers
// "[name]" prefix following keys as "name.key".
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::string& path);

}  // namespace guide
