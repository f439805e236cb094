#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xrdattn::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kIo = 3,
  kNumeric = 4,
  kCompat = 5,
};

/// Runs one command. `args` excludes the program name, e.g.
/// {"synth", "--out", "data", "--n", "100"}. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xrdattn::cli
