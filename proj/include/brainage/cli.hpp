#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace brainage {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

/// Runs one invocation; args excludes the program name. Machine-readable results go to out,
/// diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace brainage
