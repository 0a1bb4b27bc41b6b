#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "evloop/dataio.hpp"
#include "evloop/harness.hpp"
#include "evloop/policy.hpp"
#include "evloop/protocol.hpp"
#include "evloop/reward.hpp"

namespace evloop {

struct RolloutSample {
  std::string output;  // raw response y
  std::size_t candidate_index = 0;
  Observation observation;
  RewardBreakdown reward;
  double logprob_old = 0.0;
  double logprob_new = 0.0;
  double advantage = 0.0;
  bool well_formed = false;
  std::size_t think_chars = 0;
  std::size_t code_chars = 0;
};

struct RolloutGroup {
  ConditioningContext context;
  std::vector<RolloutSample> samples;

  const std::string& context_id() const { return context.problem.id; }
};

struct GrpoParams {
  double clip_eps = 0.2;
  double kl_coef = 0.001;
  /// Frozen reference policy; train_loop snapshots the initial policy when null.
  std::shared_ptr<const CategoricalPolicy> ref_policy;
};

struct DapoParams {
  double clip_low = 0.2;
  double clip_high = 0.28;
};

struct AlgoConfig {
  std::variant<GrpoParams, DapoParams> variant = GrpoParams{};
  double adv_delta = 1e-6;
  std::size_t group_size = 8;
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  std::size_t max_steps = 100;
  std::size_t worker_budget = 1;
  TagWeights weights;
  Tolerances tolerances;

  bool is_dapo() const { return std::holds_alternative<DapoParams>(variant); }
  void validate() const;
};

struct ObjectiveValue {
  double value = 0.0;
  /// Clipped surrogate term of each sample, indexed [group][sample].
  std::vector<std::vector<double>> per_sample;
  /// Batch-mean KL(pi || pi_ref); zero for DAPO.
  double kl = 0.0;
};

using Gradient = std::map<std::string, std::vector<double>>;

/// (R_i - mean) / (population std + adv_delta).
std::vector<double> group_advantages(const std::vector<double>& rewards, double adv_delta);

std::vector<double> importance_ratios(const RolloutGroup& group);

/// Mean over groups of mean_i min(rho A, clip(rho, 1-eps, 1+eps) A), minus kl_coef times
/// the exact per-context KL to the reference averaged over groups.
ObjectiveValue grpo_objective(const std::vector<RolloutGroup>& groups, const GrpoParams& params,
                              const CategoricalPolicy& policy);

/// Asymmetric clipping, no KL term. Every group must have positive reward variance.
ObjectiveValue dapo_objective(const std::vector<RolloutGroup>& groups, const DapoParams& params);

/// Keeps groups whose total rewards are not all equal, in order.
std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups);

/// Sets every sample's logprob_new from `policy`.
void refresh_logprobs(std::vector<RolloutGroup>& groups, const CategoricalPolicy& policy);

/// Objective of the configured variant at `policy` (log-probabilities refreshed on a copy).
double evaluate_objective(const CategoricalPolicy& policy, std::vector<RolloutGroup> groups, const AlgoConfig& cfg);

/// Analytic gradient of the configured objective with respect to each context's logits.
/// At a clip boundary the unclipped branch is differentiated.
Gradient surrogate_gradient(const CategoricalPolicy& policy, const std::vector<RolloutGroup>& groups,
                            const AlgoConfig& cfg);

struct StepMetrics {
  std::size_t step = 0;
  double mean_r_fmt = 0.0;
  double mean_r_ans = 0.0;
  double mean_total = 0.0;
  double mean_think_chars = 0.0;
  double mean_code_chars = 0.0;
  std::size_t groups_retained = 0;
  double objective = 0.0;
};

struct TrainResult {
  CategoricalPolicy policy;
  std::vector<StepMetrics> metrics;
};

/// Backends keyed by solver id, with the distribution solvers are drawn from.
struct Environment {
  std::map<std::string, BackendSpec> backends;
  SolverDistribution distribution;

  static Environment single(const BackendSpec& backend);
  static Environment uniform(const std::vector<BackendSpec>& backends);
  const BackendSpec& backend(const std::string& solver_id) const;
};

/// Parses each response, executes the well-formed ones, and scores every sample.
void execute_and_score(RolloutGroup& group, const BackendSpec& backend, const AlgoConfig& cfg);

/// UTF-8 code points.
std::size_t char_count(std::string_view text);

/// The generate / execute / reward / update loop. Every dataset instance needs a
/// candidate pool. `on_step` sees each step's metrics as soon as they exist.
TrainResult train_loop(const std::vector<ProblemInstance>& dataset, const Environment& env,
                       CategoricalPolicy policy, AlgoConfig cfg, std::uint64_t seed,
                       const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace evloop
