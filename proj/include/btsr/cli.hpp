#pragma once

#include <ostream>

namespace btsr {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;         // bad flags, missing input, invalid config
inline constexpr int kExitPartialSweep = 3;  // some sweep runs failed

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace btsr
