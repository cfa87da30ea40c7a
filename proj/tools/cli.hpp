#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sddr::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

// Runs one command line (without the program name). Errors are reported as a
// single JSON line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sddr::cli
