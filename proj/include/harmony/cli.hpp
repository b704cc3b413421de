#pragma once

#include <ostream>

namespace harmony::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;
inline constexpr int kValidationFailure = 3;

// Entry point of the `harmony` tool. Payload goes to `out`, diagnostics to
// `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace harmony::cli
