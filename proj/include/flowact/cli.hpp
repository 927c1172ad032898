#pragma once

#include <iosfwd>

namespace flowact {

/// Exit codes of the `flowact` command.
enum ExitCode : int {
  kExitOk = 0,
  /// The run finished but an invariant check failed (infeasible action
  /// executed, unsatisfiable constraint, invalid sample).
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitRuntime = 3,
};

/// `flowact <sample|train-flow|eval-flow|train-rl|compile-pb> --config <path>
/// [--seed N] [--out DIR] [--env NAME] [--method M] [--count N]
/// [--baseline ddpg-projection] [--dataset PATH] [--flow PATH]`
///
/// All outputs go under --out (default "out") together with manifest.json.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flowact
