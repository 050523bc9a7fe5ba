#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nodebench {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
/// Full-string double parse; accepts "a/b" fractions such as "8/255".
/// Throws ConfigError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
unsigned long long parse_unsigned(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char delimiter);

}  // namespace nodebench
