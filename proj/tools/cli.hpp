#pragma once

#include <ostream>

namespace semprint {

enum ExitStatus : int {
  kExitPass = 0,       ///< success, every check passed
  kExitSpecFail = 1,   ///< a property failed or the print was aborted/rejected
  kExitUsage = 2,      ///< bad arguments or unreadable/invalid input
  kExitNumerical = 3,  ///< solver or model failure
};

/// Entry point of the `semprint` tool, with the streams injectable for tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace semprint
