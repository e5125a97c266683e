#pragma once

#include <string>
#include <vector>

namespace neural_sheaf {

enum ExitCode : int { exit_ok = 0, exit_runtime = 1, exit_usage = 2 };

/// Entry point of the command-line tool: converge, train, sgd, diagnose,
/// sweep, dataset. Returns the process exit code.
int run_cli(int argc, char** argv);

/// Same as run_cli with argv[0] omitted.
int run_cli(const std::vector<std::string>& args);

}  // namespace neural_sheaf
