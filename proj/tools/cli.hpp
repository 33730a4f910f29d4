#pragma once

#include <string>
#include <vector>

namespace nowcast::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kNumeric = 3,
  kDataContract = 4,
  kGradcheck = 5,
};

/// Parses `args` (without the program name) and runs one command.
int run(const std::vector<std::string>& args);

}  // namespace nowcast::cli
