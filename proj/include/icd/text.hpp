#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace icd::text {

std::vector<std::string> split_ws(std::string_view s);
std::string join_ws(const std::vector<std::string>& words);
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string replace_all(std::string s, std::string_view from, std::string_view to);
bool starts_with(std::string_view s, std::string_view prefix);
/// Splits on '\n', keeping empty lines.
std::vector<std::string> split_lines(std::string_view s);

}  // namespace icd::text
