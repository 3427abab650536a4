#pragma once

namespace bdc::cli {

/// Entry point of the command-line tool (subcommands: simulate, fit,
/// compare, report). Returns the process exit code: 0 success, 2 usage or
/// input error, 3 partial failure.
int run(int argc, const char* const* argv);

}  // namespace bdc::cli
