#pragma once

// Minimal RFC 4180 CSV helpers (quoted fields, no embedded newlines).

#include <string>
#include <string_view>
#include <vector>

namespace paudit::csv {

std::vector<std::string> split_line(std::string_view line);
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

}  // namespace paudit::csv
