#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mstts::app {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitContract = 4,
  kExitNumerical = 5,
};

/// Invalid flag values or flag combinations.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Runs one command line (args[0] is the program name). Normal output goes
/// to `out`, diagnostics to `err`; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mstts::app
