#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evloop {

inline constexpr std::string_view kErrorStatus = "ERROR";
inline constexpr std::string_view kOptimalStatus = "OPTIMAL";
inline constexpr std::string_view kTimeoutMarker = "[harness] timeout";
inline constexpr std::string_view kMemoryMarker = "[harness] memory limit exceeded";

/// A backend that cannot run anything at all (bad config, missing executable).
/// Candidate failures never raise this; they are encoded in the Observation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ResourceLimits {
  std::chrono::duration<double> timeout{10.0};
  std::uint64_t memory_bytes = std::uint64_t{2} << 30;

  void validate() const;
};

struct StatusRule {
  std::string pattern;
  std::string status;
  std::regex compiled;

  StatusRule(std::string pattern, std::string status);
};

enum class BackendKind { kEmbedded, kSubprocess };

struct BackendSpec {
  std::string solver_id;
  BackendKind kind = BackendKind::kEmbedded;
  /// Subprocess argv; every `{code_file}` is replaced by the candidate's path.
  std::vector<std::string> command;
  std::vector<std::string> statuses;
  std::vector<std::string> numeric_statuses;
  /// Matched line by line in order; the first rule with any matching line wins.
  std::vector<StatusRule> status_rules;
  std::string fallback_status{kErrorStatus};
  ResourceLimits limits;
  std::string code_filename = "candidate.txt";
  bool keep_artifacts = false;
  /// Parent of per-execution scratch directories; empty means the system temp dir.
  std::filesystem::path scratch_root;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;
  bool is_numeric_status(std::string_view label) const;
  bool has_status(std::string_view label) const;
};

/// The embedded reference backend with its `STATUS: <label>` rule set.
BackendSpec embedded_backend(std::string solver_id = "reference");

BackendSpec parse_backend_config(std::string_view json_text);
BackendSpec load_backend_config(const std::filesystem::path& path);
std::string backend_config_json(const BackendSpec& backend);

/// The standardized execution result (executed, status, objective, log).
struct Observation {
  bool executed = false;
  std::string status{kErrorStatus};
  std::optional<double> objective;
  std::string log;
};

/// The observation assigned to output that never reaches execution.
Observation non_executable(std::string log);

/// Value from the last `Just print the best solution: <number>` line, if it parses as a
/// finite decimal real.
std::optional<double> extract_objective(std::string_view log);

std::string infer_status(std::string_view log, bool objective_present, const BackendSpec& backend);

Observation execute_candidate(std::string_view code, const BackendSpec& backend);

/// Executes candidates with up to `worker_budget` concurrent runs. Output is positionally
/// aligned with the input.
std::vector<Observation> run_group(std::string_view context_id, const std::vector<std::string>& candidates,
                                   const BackendSpec& backend, std::size_t worker_budget);

/// Replaces invalid UTF-8 sequences with U+FFFD.
std::string sanitize_utf8(std::string_view bytes);

}  // namespace evloop
