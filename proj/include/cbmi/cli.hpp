#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cbmi::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
/// Failures print a single line "error: <category>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace cbmi::cli
