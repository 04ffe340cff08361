#pragma once

#include <iosfwd>

namespace ctxseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitFreeze = 3;

// Entry point shared by the ctxseg binary and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctxseg
