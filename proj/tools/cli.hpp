#pragma once

namespace rgtrec::cli {

// Runs one command line and returns the process exit code: 0 on success, 1
// for runtime or data errors, 2 for usage or configuration errors.
int run(int argc, const char* const* argv);

}  // namespace rgtrec::cli
