#include "evloop/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

namespace evloop {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string executable_text(const std::string& text) {
  ParseResult parsed = parse_output(text);
  if (auto* ok = std::get_if<ParsedOutput>(&parsed)) return ok->code_text;
  return text;
}

}  // namespace

bool eval_correct(const Observation& obs, const Outcome& truth, double epsilon) {
  if (!obs.executed) return false;
  if (!truth.is_numeric()) return obs.status == truth.label();
  if (!obs.objective || !std::isfinite(*obs.objective)) return false;
  const double a = truth.value();
  return std::abs(*obs.objective - a) / std::max(std::abs(a), kEvalDelta) <= epsilon;
}

BenchmarkReport eval_accuracy(const std::vector<ScoredPair>& pairs, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("evaluation epsilon must be positive");
  BenchmarkReport r;
  r.epsilon = epsilon;
  for (const auto& p : pairs) {
    EvalVerdict v;
    v.instance_id = p.instance_id;
    v.predicted = p.observation.objective;
    v.truth = p.truth;
    v.executed = p.observation.executed;
    v.status = p.observation.status;
    v.correct = eval_correct(p.observation, p.truth, epsilon);
    r.correct += v.correct ? 1 : 0;
    r.executed += v.executed ? 1 : 0;
    r.verdicts.push_back(std::move(v));
  }
  r.total = pairs.size();
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

std::string BenchmarkReport::to_json() const {
  json j;
  j["backend"] = backend_id;
  j["epsilon"] = epsilon;
  j["accuracy"] = accuracy;
  j["total"] = total;
  j["correct"] = correct;
  j["executed"] = executed;
  json vs = json::array();
  for (const auto& v : verdicts) {
    json e;
    e["id"] = v.instance_id;
    e["predicted"] = v.predicted ? json(*v.predicted) : json(nullptr);
    e["truth"] = v.truth.is_numeric() ? json(v.truth.value()) : json(v.truth.label());
    e["executed"] = v.executed;
    e["status"] = v.status;
    e["correct"] = v.correct;
    vs.push_back(std::move(e));
  }
  j["verdicts"] = std::move(vs);
  return j.dump();
}

BenchmarkReport score_candidates(const std::vector<ProblemInstance>& dataset,
                                 const std::map<std::string, std::string>& candidates, const BackendSpec& backend,
                                 double epsilon, std::size_t worker_budget) {
  std::set<std::string> ids;
  for (const auto& p : dataset) ids.insert(p.id);
  for (const auto& [id, _] : candidates) {
    if (!ids.count(id)) throw std::invalid_argument("candidate for unknown instance '" + id + "'");
  }

  std::vector<std::string> codes;
  std::vector<std::size_t> where;
  std::vector<ScoredPair> pairs;
  for (const auto& p : dataset) {
    pairs.push_back({p.id, non_executable("no candidate provided"), p.truth});
    auto it = candidates.find(p.id);
    if (it == candidates.end()) continue;
    codes.push_back(executable_text(it->second));
    where.push_back(pairs.size() - 1);
  }
  if (!codes.empty()) {
    auto obs = run_group("score", codes, backend, worker_budget);
    for (std::size_t k = 0; k < where.size(); ++k) pairs[where[k]].observation = std::move(obs[k]);
  }
  BenchmarkReport r = eval_accuracy(pairs, epsilon);
  r.backend_id = backend.solver_id;
  return r;
}

std::map<std::string, std::string> read_candidate_dir(const std::filesystem::path& dir,
                                                      const std::vector<ProblemInstance>& dataset) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::set<std::string> ids;
  for (const auto& p : dataset) ids.insert(p.id);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::string> out;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    if (!ids.count(id)) throw std::invalid_argument("candidate file " + f.string() + " matches no dataset id");
    if (!out.emplace(id, read_file(f)).second) {
      throw std::invalid_argument("more than one candidate file for instance '" + id + "'");
    }
  }
  return out;
}

BenchmarkReport run_benchmark(const std::vector<ProblemInstance>& dataset, const CategoricalPolicy& policy,
                              const BackendSpec& backend, double epsilon, DecodeMode decode) {
  CategoricalPolicy view = policy;
  Rng rng(decode.seed);
  std::vector<std::string> codes;
  std::vector<std::size_t> where;
  std::vector<ScoredPair> pairs;
  for (const auto& p : dataset) {
    if (!p.has_pool()) throw std::invalid_argument("instance '" + p.id + "' has no candidate pool to decode from");
    view.ensure_context(p.id, p.candidate_pool);
    const std::size_t k = decode.greedy ? view.greedy(p.id) : view.sample(p.id, rng);
    const std::string& response = p.candidate_pool[k];
    ParseResult parsed = parse_output(response);
    if (auto* ok = std::get_if<ParsedOutput>(&parsed)) {
      pairs.push_back({p.id, Observation{}, p.truth});
      codes.push_back(std::move(ok->code_text));
      where.push_back(pairs.size() - 1);
    } else {
      pairs.push_back({p.id, non_executable("schema violation: " + std::get<SchemaViolation>(parsed).message), p.truth});
    }
  }
  if (!codes.empty()) {
    auto obs = run_group("benchmark", codes, backend, 1);
    for (std::size_t k = 0; k < where.size(); ++k) pairs[where[k]].observation = std::move(obs[k]);
  }
  BenchmarkReport r = eval_accuracy(pairs, epsilon);
  r.backend_id = backend.solver_id;
  return r;
}

std::string metrics_json_line(const StepMetrics& m) {
  json j;
  j["step"] = m.step;
  j["mean_r_fmt"] = m.mean_r_fmt;
  j["mean_r_ans"] = m.mean_r_ans;
  j["mean_total"] = m.mean_total;
  j["mean_think_chars"] = m.mean_think_chars;
  j["mean_code_chars"] = m.mean_code_chars;
  j["groups_retained"] = m.groups_retained;
  j["objective"] = m.objective;
  return j.dump();
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
}

void MetricsWriter::write(const StepMetrics& m) {
  out_ << metrics_json_line(m) << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write failed for metrics file " + path_.string());
}

void write_metrics(const std::vector<StepMetrics>& steps, const std::filesystem::path& path) {
  MetricsWriter w(path);
  for (const auto& m : steps) w.write(m);
}

}  // namespace evloop
