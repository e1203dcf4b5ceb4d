#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moelab::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kConfig = 2,
    kInput = 3,
    kNumerical = 4,
};

/// Parses `args` (without the program name) and runs the selected subcommand.
/// Errors are reported on `err` as one line "error: <kind>: <message>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moelab::cli
