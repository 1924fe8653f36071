#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pcnn {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

/// Runs the `pcnn` command line (args exclude the program name). Output that
/// belongs to the user goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pcnn
