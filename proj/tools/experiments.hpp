#pragma once

namespace CLI {
class App;
}

namespace ppn::cli {

/// Adds the `experiment` subcommand: reproducible desk-scale versions of the
/// hyper-parameter and benchmark studies (focal-sweep, rnms-sweep, accuracy,
/// speed).
void register_experiment_command(CLI::App& app, int& exit_code);

}  // namespace ppn::cli
