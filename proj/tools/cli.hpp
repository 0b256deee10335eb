#pragma once

// `lmae` command-line entry point. Exit codes: 0 success, 1 invalid
// configuration or arguments, 2 runtime failure.

#include <iosfwd>

namespace lmae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitFailure = 2;

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lmae
