#pragma once

namespace evloop {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCandidateFailures = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the `evloop` executable.
int cli_dispatch(int argc, char** argv);

}  // namespace evloop
