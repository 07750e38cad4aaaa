#pragma once

// Command-line front end: gen-data | lr-find | train | ablate | eval | predict.

#include <iosfwd>
#include <string>
#include <vector>

namespace multidepth {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// argv[0] is the program name. Help text goes to `out`, diagnostics to
/// `err`; results are written to files only.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace multidepth
