#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace medrag::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Runs `medrag <subcommand> ...` with args excluding the program name.
/// Subcommands: ingest, ask, eval, bench.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medrag::cli
