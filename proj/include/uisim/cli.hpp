#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace uisim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name. Verbs: serve, render, step, rollout,
// dataset, fid, session.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uisim
