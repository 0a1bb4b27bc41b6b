#include "evloop/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "evloop/dataio.hpp"
#include "evloop/evaluation.hpp"
#include "evloop/harness.hpp"
#include "evloop/policy.hpp"
#include "evloop/protocol.hpp"
#include "evloop/refsolver.hpp"
#include "evloop/reward.hpp"
#include "evloop/rl.hpp"

namespace evloop {

using nlohmann::json;

namespace {

// Usage or configuration problem detected by us rather than by CLI11.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome parse_answer(const std::string& text) {
  if (text == "INFEASIBLE" || text == "UNBOUNDED") return Outcome::status(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || !std::isfinite(v)) {
    throw UsageError("--answer must be a finite number, INFEASIBLE or UNBOUNDED");
  }
  return Outcome::numeric(v);
}

json observation_json(const Observation& obs) {
  return {{"executed", obs.executed},
          {"status", obs.status},
          {"objective", obs.objective ? json(*obs.objective) : json(nullptr)}};
}

int cmd_solve(const std::string& model_path) {
  auto parsed = refsolver::parse_model(slurp(model_path));
  if (auto* err = std::get_if<refsolver::ParseError>(&parsed)) {
    std::cerr << model_path << ":" << err->what() << "\n";
    return kExitUsage;
  }
  const auto result = refsolver::milp_solve(std::get<refsolver::LinearModel>(parsed));
  std::cout << refsolver::emit_result_text(result) << "\n";
  return kExitOk;
}

struct VerifyArgs {
  std::string backend;
  std::string code;
  std::string raw;
  std::string answer;
};

int cmd_verify(const VerifyArgs& a) {
  const BackendSpec backend = load_backend_config(a.backend);
  const Outcome truth = parse_answer(a.answer);
  std::string code;
  std::optional<std::string> raw;
  if (!a.raw.empty()) raw = slurp(a.raw);
  if (!a.code.empty()) {
    code = slurp(a.code);
  } else if (raw) {
    ParseResult parsed = parse_output(*raw);
    if (auto* ok = std::get_if<ParsedOutput>(&parsed)) code = ok->code_text;
  } else {
    throw UsageError("verify needs --code or --raw");
  }

  Observation obs;
  if (a.code.empty() && raw && !is_well_formed(parse_output(*raw))) {
    obs = non_executable("schema violation: " + std::get<SchemaViolation>(parse_output(*raw)).message);
  } else {
    obs = execute_candidate(code, backend);
  }

  json out = observation_json(obs);
  out["backend"] = backend.solver_id;
  out["truth"] = truth.to_string();
  const double r_ans = answer_reward(obs, truth, backend);
  out["r_ans"] = r_ans;
  if (raw) {
    const RewardBreakdown r = total_reward(*raw, obs, truth, TagWeights{}, backend);
    out["r_fmt"] = r.format_part;
    out["reward"] = r.total;
  } else {
    out["r_fmt"] = nullptr;
    out["reward"] = nullptr;
  }
  out["log"] = obs.log;
  std::cout << out.dump() << "\n";
  std::cerr << "verify: status " << obs.status << ", r_ans " << r_ans << "\n";
  return obs.executed ? kExitOk : kExitCandidateFailures;
}

int report_exit(const BenchmarkReport& r) {
  std::cout << r.to_json() << "\n";
  std::cerr << r.correct << "/" << r.total << " correct (accuracy " << r.accuracy << ", epsilon " << r.epsilon
            << ", executed " << r.executed << ") under " << r.backend_id << "\n";
  return r.executed == r.total ? kExitOk : kExitCandidateFailures;
}

struct ScoreArgs {
  std::string backend;
  std::string dataset;
  std::string candidates;
  double epsilon = 1e-4;
  std::size_t workers = 1;
};

int cmd_score(const ScoreArgs& a) {
  const BackendSpec backend = load_backend_config(a.backend);
  const auto dataset = load_dataset(a.dataset);
  const auto candidates = read_candidate_dir(a.candidates, dataset);
  return report_exit(score_candidates(dataset, candidates, backend, a.epsilon, a.workers));
}

struct TrainArgs {
  std::string dataset;
  std::vector<std::string> backends;
  std::string solver_weights;
  std::string algo = "grpo";
  std::size_t steps = 100;
  std::size_t group_size = 8;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  double lr = 0.1;
  std::size_t workers = 1;
  std::string policy_in;
  std::string policy_out;
  std::string metrics;
};

int cmd_train(const TrainArgs& a) {
  const auto dataset = load_dataset(a.dataset);
  std::vector<BackendSpec> specs;
  for (const auto& path : a.backends) specs.push_back(load_backend_config(path));
  Environment env = Environment::uniform(specs);
  if (!a.solver_weights.empty()) {
    const std::string text = std::filesystem::is_regular_file(a.solver_weights) ? slurp(a.solver_weights)
                                                                                 : a.solver_weights;
    env.distribution = SolverDistribution::from_json(text);
    for (const auto& [id, _] : env.distribution.weights()) env.backend(id);
  }

  AlgoConfig cfg;
  if (a.algo == "dapo") {
    cfg.variant = DapoParams{};
  } else if (a.algo != "grpo") {
    throw UsageError("--algo must be grpo or dapo");
  }
  cfg.max_steps = a.steps;
  cfg.group_size = a.group_size;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.worker_budget = a.workers;

  CategoricalPolicy policy = a.policy_in.empty() ? CategoricalPolicy{} : CategoricalPolicy::load(a.policy_in);
  std::optional<MetricsWriter> writer;
  if (!a.metrics.empty()) writer.emplace(a.metrics);
  const auto result = train_loop(dataset, env, std::move(policy), cfg, a.seed, [&](const StepMetrics& m) {
    if (writer) writer->write(m);
  });
  if (!a.policy_out.empty()) result.policy.save(a.policy_out);

  json out;
  out["algo"] = a.algo;
  out["steps"] = result.metrics.size();
  out["final"] = result.metrics.empty() ? json(nullptr) : json::parse(metrics_json_line(result.metrics.back()));
  std::cout << out.dump() << "\n";
  if (!result.metrics.empty()) {
    std::cerr << "train: " << result.metrics.size() << " steps, final mean reward " << result.metrics.back().mean_total
              << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string dataset;
  std::string backend;
  std::string policy;
  double epsilon = 1e-4;
  std::optional<std::uint64_t> sample_seed;
};

int cmd_eval(const EvalArgs& a) {
  const BackendSpec backend = load_backend_config(a.backend);
  const auto dataset = load_dataset(a.dataset);
  const CategoricalPolicy policy = CategoricalPolicy::load(a.policy);
  const DecodeMode decode = a.sample_seed ? DecodeMode::sampled(*a.sample_seed) : DecodeMode::argmax();
  return report_exit(run_benchmark(dataset, policy, backend, a.epsilon, decode));
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"Execution-verified training and evaluation for optimization-model code"};
  app.require_subcommand(1);

  std::string solve_path;
  auto* solve = app.add_subcommand("solve", "Solve an LP-format model with the embedded solver");
  solve->add_option("model", solve_path, "Model file")->required();

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Execute one candidate and score it");
  verify->add_option("--backend", va.backend, "Backend config JSON")->required();
  verify->add_option("--code", va.code, "Program text to execute");
  verify->add_option("--raw", va.raw, "Full <think>/<code> response, enables the format reward");
  verify->add_option("--answer", va.answer, "Number, INFEASIBLE or UNBOUNDED")->required();

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Score a directory of <id>.* candidates against a dataset");
  score->add_option("--backend", sa.backend)->required();
  score->add_option("--dataset", sa.dataset)->required();
  score->add_option("--candidates", sa.candidates)->required();
  score->add_option("--epsilon", sa.epsilon)->check(CLI::PositiveNumber);
  score->add_option("--workers", sa.workers)->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run GRPO or DAPO over the dataset's candidate pools");
  train->add_option("--dataset", ta.dataset)->required();
  train->add_option("--backend", ta.backends, "Backend config JSON (repeatable)")->required();
  train->add_option("--solver-weights", ta.solver_weights, "JSON map or file of solver weights");
  train->add_option("--algo", ta.algo)->check(CLI::IsMember({"grpo", "dapo"}));
  train->add_option("--steps", ta.steps);
  train->add_option("--group-size", ta.group_size);
  train->add_option("--batch", ta.batch);
  train->add_option("--seed", ta.seed);
  train->add_option("--lr", ta.lr);
  train->add_option("--workers", ta.workers);
  train->add_option("--policy-in", ta.policy_in);
  train->add_option("--policy-out", ta.policy_out);
  train->add_option("--metrics", ta.metrics);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Greedy-decode a policy and report accuracy");
  eval->add_option("--dataset", ea.dataset)->required();
  eval->add_option("--backend", ea.backend)->required();
  eval->add_option("--policy", ea.policy)->required();
  eval->add_option("--epsilon", ea.epsilon)->check(CLI::PositiveNumber);
  eval->add_option("--sample-seed", ea.sample_seed, "Sample instead of greedy decoding");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (solve->parsed()) return cmd_solve(solve_path);
    if (verify->parsed()) return cmd_verify(va);
    if (score->parsed()) return cmd_score(sa);
    if (train->parsed()) return cmd_train(ta);
    if (eval->parsed()) return cmd_eval(ea);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PolicyError& e) {
    std::cerr << "policy error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace evloop
