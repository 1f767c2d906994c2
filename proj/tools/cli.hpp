#pragma once

#include <string>
#include <vector>

namespace ramf_cli {

// Dispatches one command line (without argv[0]). Returns the process exit
// code: 0 success, 2 invalid arguments, 1 I/O or runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace ramf_cli
