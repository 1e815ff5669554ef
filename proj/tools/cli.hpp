#pragma once

#include <iosfwd>

namespace mmtrain::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses argv and runs one subcommand. Returns the process exit status:
/// 0 on success, 1 on a usage error, 2 on a runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmtrain::cli
