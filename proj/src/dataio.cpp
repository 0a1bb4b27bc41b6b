#include "evloop/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

namespace evloop {

using nlohmann::json;

namespace {

constexpr double kMaxExactInteger = 9007199254740992.0;  // 2^53

ProblemInstance parse_instance(const json& j, const std::string& source, std::size_t line) {
  auto bad = [&](const std::string& msg) { return DatasetError(source, line, msg); };
  if (!j.is_object()) throw bad("expected a JSON object");

  ProblemInstance p;
  if (!j.contains("id") || !j["id"].is_string()) throw bad("missing string field 'id'");
  p.id = j["id"].get<std::string>();
  if (p.id.empty()) throw bad("empty id");
  if (!j.contains("question") || !j["question"].is_string()) throw bad("missing string field 'question'");
  p.question = j["question"].get<std::string>();
  if (p.question.empty()) throw bad("empty question");

  if (!j.contains("answer") || !j["answer"].is_object()) throw bad("missing object field 'answer'");
  const json& ans = j["answer"];
  if (!ans.contains("type") || !ans["type"].is_string()) throw bad("answer lacks a 'type'");
  if (!ans.contains("value")) throw bad("answer lacks a 'value'");
  const std::string type = ans["type"].get<std::string>();
  const json& value = ans["value"];
  if (type == "number") {
    if (!value.is_number()) throw bad("numeric answer must be a JSON number");
    double v = value.get<double>();
    if (value.is_number_integer() && std::abs(v) > kMaxExactInteger) {
      throw bad("numeric answer exceeds double precision");
    }
    if (!std::isfinite(v)) throw bad("numeric answer is not finite");
    p.truth = Outcome::numeric(v);
  } else if (type == "status") {
    if (!value.is_string()) throw bad("status answer must be a string");
    const std::string label = value.get<std::string>();
    if (label != "INFEASIBLE" && label != "UNBOUNDED") {
      throw bad("status answer must be INFEASIBLE or UNBOUNDED, got '" + label + "'");
    }
    p.truth = Outcome::status(label);
  } else {
    throw bad("unknown answer type '" + type + "'");
  }

  if (j.contains("candidates")) {
    const json& c = j["candidates"];
    if (!c.is_array()) throw bad("'candidates' must be an array");
    if (c.empty()) throw bad("'candidates' must be non-empty when present");
    std::set<std::string> seen;
    for (const auto& e : c) {
      if (!e.is_string()) throw bad("candidate entries must be strings");
      std::string s = e.get<std::string>();
      if (!seen.insert(s).second) throw bad("duplicate candidate in pool");
      p.candidate_pool.push_back(std::move(s));
    }
  }
  return p;
}

}  // namespace

DatasetError::DatasetError(std::string source, std::size_t line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

std::vector<ProblemInstance> parse_dataset(std::istream& in, const std::string& source) {
  std::vector<ProblemInstance> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    ProblemInstance p = parse_instance(j, source, line_no);
    if (!ids.insert(p.id).second) throw DatasetError(source, line_no, "duplicate id '" + p.id + "'");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ProblemInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(path.string(), 0, "cannot open dataset");
  return parse_dataset(in, path.string());
}

std::string to_jsonl_line(const ProblemInstance& p) {
  json j;
  j["id"] = p.id;
  j["question"] = p.question;
  if (p.truth.is_numeric()) {
    j["answer"] = {{"type", "number"}, {"value", p.truth.value()}};
  } else {
    j["answer"] = {{"type", "status"}, {"value", p.truth.label()}};
  }
  if (p.has_pool()) j["candidates"] = p.candidate_pool;
  return j.dump();
}

void write_dataset(const std::filesystem::path& path, const std::vector<ProblemInstance>& instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(path.string(), 0, "cannot open dataset for writing");
  for (const auto& p : instances) out << to_jsonl_line(p) << '\n';
  if (!out) throw DatasetError(path.string(), 0, "write failed");
}

SolverDistribution::SolverDistribution(std::vector<std::pair<std::string, double>> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty()) throw std::invalid_argument("solver distribution has empty support");
  double sum = 0.0;
  std::set<std::string> seen;
  for (const auto& [id, w] : weights_) {
    if (id.empty()) throw std::invalid_argument("empty solver id in distribution");
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate solver id '" + id + "'");
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("solver weights must be finite and nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("solver weights must sum to 1");
}

SolverDistribution SolverDistribution::uniform(const std::vector<std::string>& solver_ids) {
  std::vector<std::pair<std::string, double>> w;
  for (const auto& id : solver_ids) w.emplace_back(id, 1.0 / static_cast<double>(solver_ids.size()));
  return SolverDistribution(std::move(w));
}

SolverDistribution SolverDistribution::from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("solver distribution is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("solver distribution must be a JSON object");
  std::vector<std::pair<std::string, double>> w;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw std::invalid_argument("solver weight for '" + key + "' is not a number");
    w.emplace_back(key, value.get<double>());
  }
  return SolverDistribution(std::move(w));
}

std::string sample_solver(const SolverDistribution& dist, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  const auto& w = dist.weights();
  for (const auto& [id, p] : w) {
    acc += p;
    if (u < acc) return id;
  }
  // Round-off at the top of the CDF: last solver with positive weight.
  for (auto it = w.rbegin(); it != w.rend(); ++it) {
    if (it->second > 0.0) return it->first;
  }
  return w.back().first;
}

ConditioningContext build_context(const ProblemInstance& problem, std::string_view solver_id) {
  return ConditioningContext{problem, std::string(solver_id), render_prompt(problem.question, solver_id)};
}

}  // namespace evloop
