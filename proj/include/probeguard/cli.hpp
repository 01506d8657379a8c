#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace probeguard::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsageError = 2;

// Entry point shared by the binary and the tests. `args` excludes the
// program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace probeguard::cli
