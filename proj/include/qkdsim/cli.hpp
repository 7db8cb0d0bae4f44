#pragma once

#include <iosfwd>

namespace qkdsim {

/// Entry point of the `qkdsim` tool. Results go to `out` (or the --out file),
/// one-line diagnostics to `err`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qkdsim
