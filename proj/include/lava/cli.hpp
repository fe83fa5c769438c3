#pragma once

// Command-line entry points: gen-corpus, train, eval, analyze, traverse.

#include <iosfwd>
#include <string>
#include <vector>

namespace lava::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace lava::cli
