#pragma once

namespace tiledet {

// Exit codes: 0 success, 2 usage, 3 IO, 4 numeric failure.
enum ExitCode { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumeric = 4 };

int run_cli(int argc, const char* const* argv);

}  // namespace tiledet
