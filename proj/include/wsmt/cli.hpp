#pragma once

// Command-line front end. `dispatch` holds all of the logic so tests can
// drive it in-process; tools/wsmt.cpp only forwards argv.

#include <ostream>
#include <string>
#include <vector>

namespace wsmt {

enum class ExitCode : int {
    ok = 0,
    internal = 1,
    usage = 2,         // bad flags, unknown subcommand
    config = 3,        // invalid configuration values
    input = 4,         // missing or unreadable files, bad data
    numeric = 5,       // training diverged
    busy = 6,          // output directory locked by another run
    check_failed = 7,  // gradcheck failure, eval mismatch with the manifest
};

// Environment variable naming the root under which runs without --out land.
inline constexpr const char* kOutRootEnv = "WSMT_OUT_ROOT";

// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wsmt
