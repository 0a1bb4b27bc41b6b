#include <doctest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "evloop/dataio.hpp"
#include "evloop/policy.hpp"

using namespace evloop;

namespace {

std::vector<ProblemInstance> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in, "mem");
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const DatasetError& e) {
    return e.line();
  }
  FAIL("expected a DatasetError");
  return 0;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("evloop-test-" + name);
}

}  // namespace

TEST_CASE("dataset lines map to instances") {
  const auto ds = parse(
      R"({"id":"p1","question":"Q","answer":{"type":"number","value":29.0}})"
      "\n\n"
      R"({"id":"p2","question":"R","answer":{"type":"status","value":"INFEASIBLE"},"candidates":["a","b"]})"
      "\n");
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].id == "p1");
  CHECK(ds[0].truth == Outcome::numeric(29.0));
  CHECK_FALSE(ds[0].has_pool());
  CHECK(ds[1].truth == Outcome::status("INFEASIBLE"));
  CHECK(ds[1].candidate_pool == std::vector<std::string>{"a", "b"});
}

TEST_CASE("dataset validation errors carry line numbers") {
  const std::string ok = R"({"id":"p1","question":"Q","answer":{"type":"number","value":1}})";
  CHECK(error_line(ok + "\n" + R"({"id":"p2","question":"Q","answer":{"type":"status","value":"MAYBE"}})") == 2);
  CHECK(error_line(ok + "\n" + ok) == 2);
  CHECK(error_line("not json") == 1);
  CHECK(error_line(R"({"id":"p","question":"","answer":{"type":"number","value":1}})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q"})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q","answer":{"type":"number","value":"7"}})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q","answer":{"type":"number","value":1},"candidates":[]})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q","answer":{"type":"number","value":1},"candidates":["a","a"]})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q","answer":{"type":"number","value":18014398509481985}})") == 1);
  CHECK(error_line(R"({"id":"p","question":"Q","answer":{"type":"fraction","value":1}})") == 1);
  CHECK_THROWS_AS(load_dataset("/nonexistent/data.jsonl"), DatasetError);
}

TEST_CASE("write then load preserves every field") {
  std::vector<ProblemInstance> ds(3);
  ds[0] = {"a", "question \"one\"\nwith newline", Outcome::numeric(-2.5e-7), {}};
  ds[1] = {"b", "two", Outcome::status("UNBOUNDED"), {"<think>x</think><code>y</code>", "z"}};
  ds[2] = {"c", "three", Outcome::numeric(1234567.125), {"only"}};
  const auto path = temp_file("roundtrip.jsonl");
  write_dataset(path, ds);
  const auto back = load_dataset(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].question == ds[i].question);
    CHECK(back[i].truth == ds[i].truth);
    CHECK(back[i].candidate_pool == ds[i].candidate_pool);
  }
  std::filesystem::remove(path);
}

TEST_CASE("solver distribution validation") {
  CHECK_THROWS(SolverDistribution({}));
  CHECK_THROWS(SolverDistribution({{"a", 0.5}, {"b", 0.4}}));
  CHECK_THROWS(SolverDistribution({{"a", 1.5}, {"b", -0.5}}));
  CHECK_THROWS(SolverDistribution({{"a", 0.5}, {"a", 0.5}}));
  CHECK_NOTHROW(SolverDistribution({{"a", 0.5}, {"b", 0.5 + 5e-10}}));
  const auto d = SolverDistribution::from_json(R"({"gurobi":0.5,"ortools":0.5})");
  CHECK(d.weights().size() == 2);
  CHECK_THROWS(SolverDistribution::from_json("[1]"));
  CHECK_THROWS(SolverDistribution::from_json(R"({"a":"x"})"));
}

TEST_CASE("sample_solver frequencies and degenerate supports") {
  Rng rng(42);
  const auto uni = SolverDistribution::uniform({"A", "B"});
  std::map<std::string, int> counts;
  for (int i = 0; i < 100000; ++i) ++counts[sample_solver(uni, rng)];
  CHECK(std::abs(counts["A"] / 100000.0 - 0.5) < 0.01);
  CHECK(std::abs(counts["B"] / 100000.0 - 0.5) < 0.01);

  const auto single = SolverDistribution::uniform({"only"});
  const SolverDistribution skew({{"A", 1.0}, {"B", 0.0}});
  for (int i = 0; i < 1000; ++i) {
    CHECK(sample_solver(single, rng) == "only");
    CHECK(sample_solver(skew, rng) == "A");
  }

  Rng r1(9), r2(9);
  for (int i = 0; i < 100; ++i) CHECK(sample_solver(uni, r1) == sample_solver(uni, r2));
}

TEST_CASE("build_context renders the solver-conditioned prompt") {
  const ProblemInstance p{"p1", "How many carts?", Outcome::numeric(29.0), {}};
  const auto g = build_context(p, "Gurobi");
  CHECK(g.solver == "Gurobi");
  CHECK(g.rendered_prompt == render_prompt(p.question, "Gurobi"));
  CHECK(g.rendered_prompt.find("How many carts?") != std::string::npos);
  const auto g2 = build_context(p, "Gurobi");
  CHECK(g2.rendered_prompt == g.rendered_prompt);

  const auto c = build_context(p, "COPT");
  std::string swapped = g.rendered_prompt;
  swapped.replace(swapped.find("Gurobi"), 6, "COPT");
  CHECK(c.rendered_prompt == swapped);
}

TEST_CASE("policy softmax, sampling and greedy decoding") {
  CategoricalPolicy p;
  p.ensure_context("c", {"a", "b", "c", "d"});
  auto probs = p.probabilities("c");
  for (double x : probs) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p.greedy("c") == 0);

  p.mutable_logits("c") = {0.1, 2.0, 2.0, -1.0};
  CHECK(p.greedy("c") == 1);
  probs = p.probabilities("c");
  double sum = 0;
  for (double x : probs) sum += x;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  for (double& z : p.mutable_logits("c")) z += 1000.0;
  CHECK(p.greedy("c") == 1);
  for (double x : p.log_probabilities("c")) CHECK(x <= 0.0);

  Rng rng(1);
  std::vector<int> hits(4);
  for (int i = 0; i < 40000; ++i) ++hits[p.sample("c", rng)];
  for (std::size_t k = 0; k < 4; ++k) CHECK(hits[k] / 40000.0 == doctest::Approx(probs[k]).epsilon(0.05));
}

TEST_CASE("policy context guards and persistence") {
  CategoricalPolicy p(0.7);
  p.ensure_context("c", {"a", "b"});
  p.mutable_logits("c") = {0.3, -1.25};
  CHECK_NOTHROW(p.ensure_context("c", {"a", "b"}));
  CHECK(p.logits("c")[0] == 0.3);
  CHECK_THROWS_AS(p.ensure_context("c", {"a", "B"}), PolicyError);
  CHECK_THROWS_AS(p.ensure_context("d", {}), PolicyError);
  CHECK_THROWS_AS(p.logits("missing"), PolicyError);
  CHECK_THROWS_AS(CategoricalPolicy(0.0), PolicyError);
  CHECK(pool_hash({"ab", "c"}) != pool_hash({"a", "bc"}));
  CHECK(pool_hash({"a"}).size() == 16);

  const auto path = temp_file("policy.json");
  p.save(path);
  const auto q = CategoricalPolicy::load(path);
  CHECK(q.to_json() == p.to_json());
  CHECK(q.same_shape(p));
  CHECK(q.temperature() == 0.7);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(CategoricalPolicy::from_json("{"), PolicyError);
  CHECK_THROWS_AS(CategoricalPolicy::from_json(R"({"contexts":{"c":{"pool_hash":"x","logits":[]}}})"), PolicyError);
}
