#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace softarm::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kInvalidInput = 2;
inline constexpr int kNotConverged = 3;
inline constexpr int kUsage = 64;

inline constexpr int kReportSchema = 1;
inline constexpr const char* kSceneEnv = "SOFTARM_SCENE";

// Runs one invocation; args[0] is the program name. Reports go to --out
// when given, otherwise to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace softarm::cli
