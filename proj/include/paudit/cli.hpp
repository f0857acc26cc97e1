#pragma once

// Command-line entry point. Exit codes: 0 success, 1 domain error, 2 usage.

#include <iosfwd>
#include <string>
#include <vector>

namespace paudit {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace paudit
