#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evloop/harness.hpp"

namespace evloop::detail {

struct ProcessResult {
  int exit_code = -1;    // valid when term_signal == 0
  int term_signal = 0;
  bool timed_out = false;
  bool memory_exceeded = false;  // RSS monitor fired
  std::uint64_t peak_rss_bytes = 0;
  std::string output;  // stdout and stderr interleaved
  bool output_truncated = false;
};

// Runs argv in its own process group with stdin at /dev/null, RLIMIT_AS at the memory
// cap, and an RSS monitor as a second line. On timeout or breach the whole group is
// killed. Throws ConfigError if the program cannot be executed at all.
ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          const ResourceLimits& limits, std::size_t max_output_bytes);

}  // namespace evloop::detail
