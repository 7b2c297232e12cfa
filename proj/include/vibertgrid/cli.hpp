// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: synthesize, rasterize, train, evaluate, predict.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vbg {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

/// `args` excludes the program name. Errors are reported on `err` and mapped
/// to exit codes; nothing throws out of here.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vbg
