#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hscal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Environment variable holding the default seed.
inline constexpr const char* kSeedEnv = "HSCAL_SEED";

int run(int argc, char** argv);
// Same, with explicit streams (used by tests).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hscal::cli
