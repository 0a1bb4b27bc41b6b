#include "evloop/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evloop {

namespace {

struct ClipRange {
  double low;
  double high;
};

ClipRange clip_range(const AlgoConfig& cfg) {
  if (const auto* g = std::get_if<GrpoParams>(&cfg.variant)) return {1.0 - g->clip_eps, 1.0 + g->clip_eps};
  const auto& d = std::get<DapoParams>(cfg.variant);
  return {1.0 - d.clip_low, 1.0 + d.clip_high};
}

double clipped_term(double ratio, double advantage, ClipRange range) {
  const double clipped = std::clamp(ratio, range.low, range.high);
  return std::min(ratio * advantage, clipped * advantage);
}

// Whether min() selects the unclipped branch (ties included).
bool unclipped_active(double ratio, double advantage, ClipRange range) {
  if (advantage > 0.0) return ratio <= range.high;
  if (advantage < 0.0) return ratio >= range.low;
  return true;
}

double surrogate_sum(const std::vector<RolloutGroup>& groups, ClipRange range,
                     std::vector<std::vector<double>>& per_sample) {
  per_sample.clear();
  double total = 0.0;
  for (const auto& g : groups) {
    const auto ratios = importance_ratios(g);
    std::vector<double> terms(g.samples.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < g.samples.size(); ++i) {
      terms[i] = clipped_term(ratios[i], g.samples[i].advantage, range);
      sum += terms[i];
    }
    total += g.samples.empty() ? 0.0 : sum / static_cast<double>(g.samples.size());
    per_sample.push_back(std::move(terms));
  }
  return total;
}

bool zero_variance(const RolloutGroup& g) {
  if (g.samples.empty()) return true;
  const double first = g.samples.front().reward.total;
  return std::all_of(g.samples.begin(), g.samples.end(),
                     [&](const RolloutSample& s) { return s.reward.total == first; });
}

double kl_divergence(const std::vector<double>& logp, const std::vector<double>& logq) {
  double kl = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) kl += std::exp(logp[k]) * (logp[k] - logq[k]);
  return kl;
}

const CategoricalPolicy& require_ref(const GrpoParams& params) {
  if (!params.ref_policy) throw PolicyError("GRPO objective needs a reference policy snapshot");
  return *params.ref_policy;
}

void check_ref_shape(const CategoricalPolicy& policy, const CategoricalPolicy& ref, const std::string& id) {
  const auto& a = policy.context(id);
  if (!ref.has_context(id)) throw PolicyError("reference policy lacks context '" + id + "'");
  const auto& b = ref.context(id);
  if (a.pool_hash != b.pool_hash || a.logits.size() != b.logits.size()) {
    throw PolicyError("reference policy pool shape mismatch for context '" + id + "'");
  }
}

}  // namespace

void AlgoConfig::validate() const {
  if (const auto* g = std::get_if<GrpoParams>(&variant)) {
    if (!(g->clip_eps > 0.0)) throw std::invalid_argument("GRPO clip epsilon must be positive");
    if (!(g->kl_coef >= 0.0)) throw std::invalid_argument("GRPO KL coefficient must be nonnegative");
  } else {
    const auto& d = std::get<DapoParams>(variant);
    if (!(d.clip_low > 0.0) || !(d.clip_high > d.clip_low)) {
      throw std::invalid_argument("DAPO needs clip_high > clip_low > 0");
    }
  }
  if (!(adv_delta > 0.0)) throw std::invalid_argument("advantage delta must be positive");
  if (group_size < 2) throw std::invalid_argument("group size must be at least 2");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (worker_budget < 1) throw std::invalid_argument("worker budget must be positive");
  weights.validate();
  tolerances.validate();
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double adv_delta) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sd + adv_delta);
  return out;
}

std::vector<double> importance_ratios(const RolloutGroup& group) {
  std::vector<double> out;
  out.reserve(group.samples.size());
  for (const auto& s : group.samples) out.push_back(std::exp(s.logprob_new - s.logprob_old));
  return out;
}

ObjectiveValue grpo_objective(const std::vector<RolloutGroup>& groups, const GrpoParams& params,
                              const CategoricalPolicy& policy) {
  ObjectiveValue out;
  if (groups.empty()) return out;
  const CategoricalPolicy& ref = require_ref(params);
  const ClipRange range{1.0 - params.clip_eps, 1.0 + params.clip_eps};
  const double n = static_cast<double>(groups.size());
  const double surrogate = surrogate_sum(groups, range, out.per_sample);
  double kl = 0.0;
  for (const auto& g : groups) {
    check_ref_shape(policy, ref, g.context_id());
    kl += kl_divergence(policy.log_probabilities(g.context_id()), ref.log_probabilities(g.context_id()));
  }
  out.kl = kl / n;
  out.value = surrogate / n - params.kl_coef * out.kl;
  return out;
}

ObjectiveValue dapo_objective(const std::vector<RolloutGroup>& groups, const DapoParams& params) {
  ObjectiveValue out;
  if (groups.empty()) return out;
  for (const auto& g : groups) {
    if (zero_variance(g)) {
      throw std::invalid_argument("DAPO objective received a zero-variance group for '" + g.context_id() + "'");
    }
  }
  const ClipRange range{1.0 - params.clip_low, 1.0 + params.clip_high};
  out.value = surrogate_sum(groups, range, out.per_sample) / static_cast<double>(groups.size());
  return out;
}

std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups) {
  std::vector<RolloutGroup> kept;
  kept.reserve(groups.size());
  for (auto& g : groups) {
    if (!zero_variance(g)) kept.push_back(std::move(g));
  }
  return kept;
}

void refresh_logprobs(std::vector<RolloutGroup>& groups, const CategoricalPolicy& policy) {
  for (auto& g : groups) {
    const auto logp = policy.log_probabilities(g.context_id());
    for (auto& s : g.samples) {
      if (s.candidate_index >= logp.size()) throw PolicyError("sample index outside the candidate pool");
      s.logprob_new = logp[s.candidate_index];
    }
  }
}

double evaluate_objective(const CategoricalPolicy& policy, std::vector<RolloutGroup> groups, const AlgoConfig& cfg) {
  refresh_logprobs(groups, policy);
  if (const auto* g = std::get_if<GrpoParams>(&cfg.variant)) return grpo_objective(groups, *g, policy).value;
  return dapo_objective(groups, std::get<DapoParams>(cfg.variant)).value;
}

Gradient surrogate_gradient(const CategoricalPolicy& policy, const std::vector<RolloutGroup>& groups,
                            const AlgoConfig& cfg) {
  Gradient grad;
  for (const auto& g : groups) grad.try_emplace(g.context_id(), policy.logits(g.context_id()).size(), 0.0);
  if (groups.empty()) return grad;

  const ClipRange range = clip_range(cfg);
  const double n_groups = static_cast<double>(groups.size());
  const double temp = policy.temperature();
  const auto* grpo = std::get_if<GrpoParams>(&cfg.variant);
  const CategoricalPolicy* ref = grpo ? &require_ref(*grpo) : nullptr;

  for (const auto& g : groups) {
    const std::string& id = g.context_id();
    auto& out = grad.at(id);
    const auto logp = policy.log_probabilities(id);
    std::vector<double> p(logp.size());
    std::transform(logp.begin(), logp.end(), p.begin(), [](double l) { return std::exp(l); });

    // d rho_i / d z_j = rho_i (1[j = k_i] - p_j) / T
    const double scale = 1.0 / (n_groups * static_cast<double>(g.samples.size()) * temp);
    for (const auto& s : g.samples) {
      const double ratio = std::exp(logp[s.candidate_index] - s.logprob_old);
      if (s.advantage == 0.0 || !unclipped_active(ratio, s.advantage, range)) continue;
      const double w = scale * s.advantage * ratio;
      for (std::size_t j = 0; j < p.size(); ++j) out[j] -= w * p[j];
      out[s.candidate_index] += w;
    }

    if (grpo && grpo->kl_coef != 0.0) {
      check_ref_shape(policy, *ref, id);
      const auto logq = ref->log_probabilities(id);
      const double kl = kl_divergence(logp, logq);
      // d KL / d z_j = p_j ((log p_j - log q_j) - KL) / T
      const double w = grpo->kl_coef / (n_groups * temp);
      for (std::size_t j = 0; j < p.size(); ++j) out[j] -= w * p[j] * ((logp[j] - logq[j]) - kl);
    }
  }
  return grad;
}

Environment Environment::single(const BackendSpec& backend) { return uniform({backend}); }

Environment Environment::uniform(const std::vector<BackendSpec>& backends) {
  if (backends.empty()) throw ConfigError("no backends configured");
  std::map<std::string, BackendSpec> by_id;
  std::vector<std::string> ids;
  for (const auto& b : backends) {
    b.validate();
    if (!by_id.emplace(b.solver_id, b).second) throw ConfigError("duplicate backend solver id '" + b.solver_id + "'");
    ids.push_back(b.solver_id);
  }
  return Environment{std::move(by_id), SolverDistribution::uniform(ids)};
}

const BackendSpec& Environment::backend(const std::string& solver_id) const {
  auto it = backends.find(solver_id);
  if (it == backends.end()) throw ConfigError("no backend configured for solver '" + solver_id + "'");
  return it->second;
}

std::size_t char_count(std::string_view text) {
  return static_cast<std::size_t>(
      std::count_if(text.begin(), text.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

void execute_and_score(RolloutGroup& group, const BackendSpec& backend, const AlgoConfig& cfg) {
  std::vector<std::string> codes;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < group.samples.size(); ++i) {
    auto& s = group.samples[i];
    ParseResult parsed = parse_output(s.output);
    if (auto* ok = std::get_if<ParsedOutput>(&parsed)) {
      s.well_formed = true;
      s.think_chars = char_count(ok->think_text);
      s.code_chars = char_count(ok->code_text);
      codes.push_back(std::move(ok->code_text));
      where.push_back(i);
    } else {
      const auto& v = std::get<SchemaViolation>(parsed);
      s.well_formed = false;
      s.observation = non_executable("schema violation: " + v.message);
    }
  }
  if (!codes.empty()) {
    auto observations = run_group(group.context_id(), codes, backend, cfg.worker_budget);
    for (std::size_t k = 0; k < where.size(); ++k) group.samples[where[k]].observation = std::move(observations[k]);
  }
  for (auto& s : group.samples) {
    s.reward = total_reward(s.output, s.observation, group.context.problem.truth, cfg.weights, backend, cfg.tolerances);
  }
}

TrainResult train_loop(const std::vector<ProblemInstance>& dataset, const Environment& env, CategoricalPolicy policy,
                       AlgoConfig cfg, std::uint64_t seed, const std::function<void(const StepMetrics&)>& on_step) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  for (const auto& p : dataset) {
    if (!p.has_pool()) throw std::invalid_argument("instance '" + p.id + "' has no candidate pool");
    policy.ensure_context(p.id, p.candidate_pool);
  }
  for (const auto& [id, _] : env.distribution.weights()) env.backend(id);
  if (auto* g = std::get_if<GrpoParams>(&cfg.variant); g && !g->ref_policy) {
    g->ref_policy = std::make_shared<const CategoricalPolicy>(policy);
  }

  Rng rng(seed);
  TrainResult result{policy, {}};
  CategoricalPolicy& current = result.policy;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const CategoricalPolicy old_policy = current;

    std::vector<RolloutGroup> groups;
    groups.reserve(cfg.batch_size);
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      const auto pick = std::min(dataset.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(dataset.size())));
      const ProblemInstance& problem = dataset[pick];
      const std::string solver = sample_solver(env.distribution, rng);
      RolloutGroup g{build_context(problem, solver), {}};
      const auto logp = old_policy.log_probabilities(problem.id);
      for (std::size_t k = 0; k < cfg.group_size; ++k) {
        RolloutSample s;
        s.candidate_index = old_policy.sample(problem.id, rng);
        s.output = problem.candidate_pool[s.candidate_index];
        s.logprob_old = logp[s.candidate_index];
        s.logprob_new = s.logprob_old;
        g.samples.push_back(std::move(s));
      }
      groups.push_back(std::move(g));
    }

    StepMetrics m;
    m.step = step;
    std::size_t n_samples = 0;
    std::size_t n_well_formed = 0;
    for (auto& g : groups) {
      execute_and_score(g, env.backend(g.context.solver), cfg);
      std::vector<double> rewards;
      for (const auto& s : g.samples) {
        rewards.push_back(s.reward.total);
        m.mean_r_fmt += s.reward.format_part;
        m.mean_r_ans += s.reward.answer_part;
        m.mean_total += s.reward.total;
        if (s.well_formed) {
          m.mean_think_chars += static_cast<double>(s.think_chars);
          m.mean_code_chars += static_cast<double>(s.code_chars);
          ++n_well_formed;
        }
        ++n_samples;
      }
      const auto adv = group_advantages(rewards, cfg.adv_delta);
      for (std::size_t i = 0; i < g.samples.size(); ++i) g.samples[i].advantage = adv[i];
    }
    m.mean_r_fmt /= static_cast<double>(n_samples);
    m.mean_r_ans /= static_cast<double>(n_samples);
    m.mean_total /= static_cast<double>(n_samples);
    if (n_well_formed > 0) {
      m.mean_think_chars /= static_cast<double>(n_well_formed);
      m.mean_code_chars /= static_cast<double>(n_well_formed);
    }

    if (cfg.is_dapo()) groups = dynamic_filter(std::move(groups));
    m.groups_retained = groups.size();

    if (!groups.empty()) {
      refresh_logprobs(groups, current);
      if (const auto* g = std::get_if<GrpoParams>(&cfg.variant)) {
        m.objective = grpo_objective(groups, *g, current).value;
      } else {
        m.objective = dapo_objective(groups, std::get<DapoParams>(cfg.variant)).value;
      }
      const Gradient grad = surrogate_gradient(current, groups, cfg);
      for (const auto& [id, gz] : grad) {
        auto& z = current.mutable_logits(id);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += cfg.learning_rate * gz[k];
      }
    }

    result.metrics.push_back(m);
    if (on_step) on_step(m);
  }
  return result;
}

}  // namespace evloop
