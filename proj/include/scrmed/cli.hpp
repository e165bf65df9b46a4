#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scrmed {

/// Runs the command-line interface. Returns 0 on success, 1 on numerical
/// failure and 2 on invalid input.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Parses "a:b:k" (k equally spaced points from a to b) or a comma list.
std::vector<double> parse_grid(const std::string& spec);

}  // namespace scrmed
