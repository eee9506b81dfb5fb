#ifndef UVQ_CLI_HPP
#define UVQ_CLI_HPP

#include <string>
#include <vector>

namespace uvq {

// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Runs one `uvq` invocation. args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace uvq

#endif
