#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cytopipe {

/// Exit codes: 0 success, 1 validation error or bad usage, 2 adapter/runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace cytopipe
