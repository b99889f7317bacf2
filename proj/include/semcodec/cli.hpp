#pragma once

#include <ostream>

namespace semcodec::cli {

// Exit codes of run().
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kRuntimeError = 3;

// Entry point of the `semcodec` tool; argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace semcodec::cli
