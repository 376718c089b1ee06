#pragma once

#include <ostream>

namespace hrapr::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kItemFailures = 1;
inline constexpr int kUsageOrFormat = 2;

/// Runs the `hrapr` command line. Normal output goes to `out`, diagnostics
/// to `err`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hrapr::cli
