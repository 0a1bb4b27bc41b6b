#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evloop/dataio.hpp"
#include "evloop/harness.hpp"
#include "evloop/policy.hpp"
#include "evloop/reward.hpp"
#include "evloop/rl.hpp"

namespace evloop {

inline constexpr double kEvalDelta = 1e-12;

struct EvalVerdict {
  std::string instance_id;
  std::optional<double> predicted;
  Outcome truth = Outcome::numeric(0.0);
  bool correct = false;
  bool executed = false;
  std::string status;
};

struct BenchmarkReport {
  double accuracy = 0.0;
  std::vector<EvalVerdict> verdicts;
  std::string backend_id;
  double epsilon = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t executed = 0;

  std::string to_json() const;
};

/// Inclusive relative test |v - a| / max(|a|, 1e-12) <= epsilon. Looser than training's
/// strict is_close on purpose.
bool eval_correct(const Observation& obs, const Outcome& truth, double epsilon);

struct ScoredPair {
  std::string instance_id;
  Observation observation;
  Outcome truth;
};

BenchmarkReport eval_accuracy(const std::vector<ScoredPair>& pairs, double epsilon);

/// Runs each candidate through the harness. A candidate that is itself a well-formed
/// response has its code block executed. Instances without a candidate count as failures.
BenchmarkReport score_candidates(const std::vector<ProblemInstance>& dataset,
                                 const std::map<std::string, std::string>& candidates, const BackendSpec& backend,
                                 double epsilon, std::size_t worker_budget = 1);

/// Reads `<id>.<ext>` files from a directory; files whose stem is not a dataset id are errors.
std::map<std::string, std::string> read_candidate_dir(const std::filesystem::path& dir,
                                                      const std::vector<ProblemInstance>& dataset);

struct DecodeMode {
  bool greedy = true;
  std::uint64_t seed = 0;

  static DecodeMode argmax() { return {}; }
  static DecodeMode sampled(std::uint64_t seed) { return {false, seed}; }
};

/// Decodes one pool entry per instance and scores it. The policy is not modified, so
/// passing a different backend is a zero-shot transfer run.
BenchmarkReport run_benchmark(const std::vector<ProblemInstance>& dataset, const CategoricalPolicy& policy,
                              const BackendSpec& backend, double epsilon, DecodeMode decode = DecodeMode::argmax());

std::string metrics_json_line(const StepMetrics& m);

/// JSONL sink flushed after every line. Opening truncates (and creates) the file.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const StepMetrics& m);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_metrics(const std::vector<StepMetrics>& steps, const std::filesystem::path& path);

}  // namespace evloop
