#ifndef AIOHMM_CLI_HPP
#define AIOHMM_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace aiohmm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand: simulate, featurize, train, anticipate, score, sweep
/// or report. `args` excludes the program name. Returns the process exit
/// code: 0 on success, 1 on runtime errors, 2 on usage errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace aiohmm

#endif  // AIOHMM_CLI_HPP
