#pragma once

#include <string>
#include <vector>

namespace mrg {

// Entry point behind the command line binary, callable in-process for tests.
// args excludes the program name. Exit codes: 0 success, 1 usage error,
// 2 data or shape error, 3 numerical or unexpected failure.
int run_cli(std::vector<std::string> args);

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace mrg
