#pragma once

#include <iosfwd>

namespace auxseg {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Entry point of the `auxseg` command (gen-data, train, compare, verify).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace auxseg
