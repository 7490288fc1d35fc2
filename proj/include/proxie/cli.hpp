#pragma once

#include <iosfwd>

namespace proxie {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitAllFailed = 2,
  kExitIo = 3,
};

// proxie simulate|estimate|benchmark|diagnose --config <path> [--out <dir>]
//        [--threads <k>] [--seed <u64>]
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace proxie
