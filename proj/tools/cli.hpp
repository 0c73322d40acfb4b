#pragma once

#include <string>
#include <vector>

// Command-line entry point wiring all modules together. Settings for every
// subcommand merge three layers: built-in defaults, then a JSON config file
// (--config), then explicit command-line flags; each effective value is
// traceable to exactly one of those sources and --print-config emits the
// merged result in a form that reproduces the run when fed back in.

namespace ppn::cli {

/// Dispatches argv to a subcommand. Returns 0 on success, 2 on usage errors,
/// 1 on runtime/I-O failures (with a single-line diagnostic on stderr).
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace ppn::cli
