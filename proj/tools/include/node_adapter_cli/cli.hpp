#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace node_adapter::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kIo = 3,           // also malformed files
  kDivergence = 4,
  kDataMismatch = 5,
};

/// Runs one command line (without the program name). Machine-readable output
/// goes to `out`, summaries and diagnostics to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace node_adapter::cli
