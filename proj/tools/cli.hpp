#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace free360::cli {

/// Environment variables read for the HTTP backend unless overridden.
inline constexpr const char* kApiKeyEnv = "FREE360_API_KEY";
inline constexpr const char* kApiBaseEnv = "FREE360_API_BASE";

/// Runs the command line; returns the process exit code. Output goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace free360::cli
