#pragma once

#include <iosfwd>

namespace hsocc::cli {

/// Parses argv and dispatches a subcommand. Exit codes: 0 success,
/// 1 partial failure, 2 invalid invocation.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hsocc::cli
