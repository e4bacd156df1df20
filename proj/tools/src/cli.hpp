#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace instformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses `args` (without the program name) and runs the selected command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace instformer::cli
