#pragma once

#include <string>
#include <vector>

namespace kp {

// Entry point behind the kp binary; returns the process exit code
// (0 success, 2 config error, 3 data-integrity error, 4 backend error).
int run_cli(const std::vector<std::string>& args);

}  // namespace kp
