#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace euda::cli {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kDiverged = 3,
  kGradCheckFailed = 4,
};

// Entry point shared by the binary and the tests. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace euda::cli
