#pragma once

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evloop/random.hpp"
#include "evloop/reward.hpp"

namespace evloop {

struct ProblemInstance {
  std::string id;
  std::string question;
  Outcome truth = Outcome::numeric(0.0);
  /// Full candidate responses the desk-scale policy chooses among; empty when absent.
  std::vector<std::string> candidate_pool;

  bool has_pool() const { return !candidate_pool.empty(); }
};

/// A problem paired with a target solver and the prompt rendered for it.
struct ConditioningContext {
  ProblemInstance problem;
  std::string solver;
  std::string rendered_prompt;
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::vector<ProblemInstance> parse_dataset(std::istream& in, const std::string& source = "<input>");
std::vector<ProblemInstance> load_dataset(const std::filesystem::path& path);

std::string to_jsonl_line(const ProblemInstance& p);
void write_dataset(const std::filesystem::path& path, const std::vector<ProblemInstance>& instances);

class SolverDistribution {
 public:
  /// Weights must be nonnegative, sum to 1 within 1e-9, and have non-empty support.
  explicit SolverDistribution(std::vector<std::pair<std::string, double>> weights);
  static SolverDistribution uniform(const std::vector<std::string>& solver_ids);
  /// JSON object mapping solver id to weight.
  static SolverDistribution from_json(std::string_view json_text);

  const std::vector<std::pair<std::string, double>>& weights() const { return weights_; }

 private:
  std::vector<std::pair<std::string, double>> weights_;
};

std::string sample_solver(const SolverDistribution& dist, Rng& rng);

ConditioningContext build_context(const ProblemInstance& problem, std::string_view solver_id);

}  // namespace evloop
