#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace scnaps::cli {

// Runs one subcommand: gen-data, train, eval, ablate, curves, xval or oracle.
// Returns the process exit code. Failures print a single line
// "error: <kind>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scnaps::cli
