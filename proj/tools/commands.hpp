#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xidle::cli {

/// Runs one command line (without the program name). Human-readable tables
/// go to `out`, diagnostics to `err`. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xidle::cli
