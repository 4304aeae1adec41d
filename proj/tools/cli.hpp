#pragma once

// Command-line front end. The binary's main() only forwards to run().

#include <iosfwd>
#include <string>
#include <vector>

namespace gquant::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

/// argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace gquant::cli
