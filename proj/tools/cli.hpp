#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pbias::cli {

inline constexpr const char* kToolVersion = "pbias 1.0.0";

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitInput = 2 };

/// Runs the command line `args` (args[0] is the program name). Primary output
/// goes to `out` unless redirected to files by flags; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pbias::cli
