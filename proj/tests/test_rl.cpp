#include <doctest.h>

#include <numeric>
#include <random>

#include "evloop/rl.hpp"
#include "support/oracles.hpp"
#include "support/toy_data.hpp"

using namespace evloop;

namespace {

ProblemInstance problem(const std::string& id, std::size_t pool_size) {
  ProblemInstance p;
  p.id = id;
  p.question = "q";
  for (std::size_t i = 0; i < pool_size; ++i) p.candidate_pool.push_back("cand" + std::to_string(i));
  return p;
}

RolloutSample sample(std::size_t k, double total, double lp_old, double lp_new, double adv) {
  RolloutSample s;
  s.candidate_index = k;
  s.reward.total = total;
  s.logprob_old = lp_old;
  s.logprob_new = lp_new;
  s.advantage = adv;
  return s;
}

RolloutGroup group_of(const std::vector<double>& rewards) {
  RolloutGroup g{ConditioningContext{problem("g", 2), "reference", "prompt"}, {}};
  for (double r : rewards) g.samples.push_back(sample(0, r, 0, 0, 0));
  return g;
}

AlgoConfig grpo(double eps, double beta, std::shared_ptr<const CategoricalPolicy> ref) {
  AlgoConfig c;
  c.variant = GrpoParams{eps, beta, std::move(ref)};
  return c;
}

AlgoConfig dapo() {
  AlgoConfig c;
  c.variant = DapoParams{0.2, 0.28};
  return c;
}

}  // namespace

TEST_CASE("group_advantages worked examples") {
  for (double a : group_advantages({1, 1, 1, 1}, 1e-6)) CHECK(a == 0.0);
  const auto two = group_advantages({2, 0}, 1e-6);
  CHECK(two[0] == doctest::Approx(1.0 / (1.0 + 1e-6)).epsilon(1e-14));
  CHECK(two[1] == doctest::Approx(-1.0 / (1.0 + 1e-6)).epsilon(1e-14));
  const auto eight = group_advantages({2, 0, 0, 0, 0, 0, 0, 0}, 1e-6);
  CHECK(std::abs(eight[0] - 2.6458) < 1e-3);
  CHECK(eight[0] == doctest::Approx(1.75 / (std::sqrt(0.4375) + 1e-6)).epsilon(1e-14));
  CHECK_THROWS(group_advantages({1}, 1e-6));
}

TEST_CASE("advantage properties on random groups") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
    std::vector<double> r(g);
    for (auto& x : r) x = std::uniform_int_distribution<int>(0, 4)(rng) * 0.5;
    const auto a = group_advantages(r, 1e-6);
    const auto ref = oracle::advantages_long(r, 1e-6);
    CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0)) <= 1e-9);
    for (std::size_t i = 0; i < g; ++i) {
      CHECK(a[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      for (std::size_t j = 0; j < g; ++j) CHECK((r[i] > r[j]) == (a[i] > a[j]));
    }
    double mean = std::accumulate(r.begin(), r.end(), 0.0) / g;
    double var = 0;
    for (double x : r) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / g);
    if (sd > 0) {
      double va = 0;
      for (double x : a) va += x * x;
      CHECK(std::sqrt(va / g) == doctest::Approx(sd / (sd + 1e-6)).epsilon(1e-9));
    }
  }
}

TEST_CASE("importance ratios") {
  RolloutGroup g = group_of({1, 0});
  g.samples[0].logprob_old = -1.0;
  g.samples[0].logprob_new = -1.0;
  g.samples[1].logprob_old = std::log(0.25);
  g.samples[1].logprob_new = std::log(0.25) + std::log(2.0);
  const auto r = importance_ratios(g);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == doctest::Approx(2.0).epsilon(1e-15));

  // doubling a candidate's mass doubles its ratio
  CategoricalPolicy pol;
  pol.ensure_context("c", {"a", "b", "c"});
  const double before = pol.log_prob("c", 0);
  pol.mutable_logits("c")[0] = std::log(4.0);  // 1/3 -> 2/3
  RolloutGroup h = group_of({1, 0});
  h.samples[0].logprob_old = before;
  h.samples[0].logprob_new = pol.log_prob("c", 0);
  CHECK(importance_ratios(h)[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("single-sample surrogate values") {
  auto one = [](double ratio, double adv, const AlgoConfig& cfg, const CategoricalPolicy& pol) {
    std::vector<RolloutGroup> gs{group_of({0})};
    gs[0].samples[0].logprob_old = std::log(0.5);
    gs[0].samples[0].logprob_new = std::log(0.5) + std::log(ratio);
    gs[0].samples[0].advantage = adv;
    gs[0].samples.push_back(sample(1, 1, std::log(0.5), std::log(0.5), 0.0));
    if (const auto* g = std::get_if<GrpoParams>(&cfg.variant)) return 2.0 * grpo_objective(gs, *g, pol).value;
    return 2.0 * dapo_objective(gs, std::get<DapoParams>(cfg.variant)).value;
  };
  CategoricalPolicy pol;
  pol.ensure_context("g", {"cand0", "cand1"});
  auto ref = std::make_shared<const CategoricalPolicy>(pol);
  CHECK(one(1.5, 1.0, grpo(0.2, 0.0, ref), pol) == doctest::Approx(1.2));
  CHECK(one(0.5, -1.0, grpo(0.2, 0.0, ref), pol) == doctest::Approx(-0.8));
  CHECK(one(1.3, 1.0, dapo(), pol) == doctest::Approx(1.28));
  CHECK(one(0.7, 1.0, dapo(), pol) == doctest::Approx(0.7));
}

TEST_CASE("GRPO objective vanishes at the reference policy") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    CategoricalPolicy pol;
    std::vector<RolloutGroup> gs;
    for (int c = 0; c < 3; ++c) {
      const std::string id = "c" + std::to_string(c);
      ProblemInstance p = problem(id, 4);
      pol.ensure_context(id, p.candidate_pool);
      for (auto& z : pol.mutable_logits(id)) z = std::normal_distribution<double>(0, 1)(rng);
      RolloutGroup g{ConditioningContext{p, "reference", "x"}, {}};
      std::vector<double> rewards;
      for (int i = 0; i < 6; ++i) {
        const std::size_t k = pol.sample(id, rng);
        const double lp = pol.log_prob(id, k);
        const double r = std::uniform_int_distribution<int>(0, 4)(rng) * 0.5;
        g.samples.push_back(sample(k, r, lp, lp, 0));
        rewards.push_back(r);
      }
      const auto a = group_advantages(rewards, 1e-6);
      for (std::size_t i = 0; i < a.size(); ++i) g.samples[i].advantage = a[i];
      gs.push_back(std::move(g));
    }
    auto ref = std::make_shared<const CategoricalPolicy>(pol);
    const auto v = grpo_objective(gs, GrpoParams{0.2, 0.001, ref}, pol);
    CHECK(std::abs(v.value) <= 1e-9);
    CHECK(v.kl == doctest::Approx(0.0));
  }
}

TEST_CASE("GRPO needs a matching reference") {
  CategoricalPolicy pol;
  pol.ensure_context("g", {"cand0", "cand1"});
  std::vector<RolloutGroup> gs{group_of({1, 0})};
  CHECK_THROWS_AS(grpo_objective(gs, GrpoParams{0.2, 0.001, nullptr}, pol), PolicyError);
  CategoricalPolicy other;
  other.ensure_context("g", {"cand0", "cand1", "cand2"});
  CHECK_THROWS_AS(grpo_objective(gs, GrpoParams{0.2, 0.001, std::make_shared<const CategoricalPolicy>(other)}, pol),
                  PolicyError);
}

TEST_CASE("dynamic_filter and DAPO zero-variance fault") {
  std::vector<RolloutGroup> gs{group_of({0, 0, 0}), group_of({2, 0, 0}), group_of({2, 2}), group_of({1, 0.5})};
  const auto kept = dynamic_filter(gs);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].samples[0].reward.total == 2.0);
  CHECK(kept[1].samples[0].reward.total == 1.0);
  CHECK_THROWS_AS(dapo_objective(gs, DapoParams{}), std::invalid_argument);
  CHECK(dapo_objective({}, DapoParams{}).value == 0.0);
}

TEST_CASE("hand-computed gradient for a [2,0] group") {
  CategoricalPolicy pol;
  pol.ensure_context("g", {"cand0", "cand1"});
  auto ref = std::make_shared<const CategoricalPolicy>(pol);
  std::vector<RolloutGroup> gs{group_of({2, 0})};
  gs[0].samples[1].candidate_index = 1;
  const auto a = group_advantages({2, 0}, 1e-6);
  for (auto& s : gs[0].samples) s.logprob_old = s.logprob_new = std::log(0.5);
  gs[0].samples[0].advantage = a[0];
  gs[0].samples[1].advantage = a[1];
  // d/dz0 = (1/2) [A0 (1 - 1/2) + A1 (0 - 1/2)] = A0 / 2
  const auto g = surrogate_gradient(pol, gs, grpo(0.2, 0.001, ref));
  CHECK(g.at("g")[0] == doctest::Approx(a[0] / 2).epsilon(1e-12));
  CHECK(g.at("g")[1] == doctest::Approx(-a[0] / 2).epsilon(1e-12));

  for (auto& s : gs[0].samples) s.advantage = 0;
  const auto zero = surrogate_gradient(pol, gs, grpo(0.2, 0.001, ref));
  for (double x : zero.at("g")) CHECK(x == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(123);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool use_dapo = trial % 2 == 1;
    CategoricalPolicy old_pol(std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    std::vector<ProblemInstance> probs;
    const int nctx = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int c = 0; c < nctx; ++c) {
      probs.push_back(problem("c" + std::to_string(c), std::uniform_int_distribution<std::size_t>(2, 5)(rng)));
      old_pol.ensure_context(probs.back().id, probs.back().candidate_pool);
      for (auto& z : old_pol.mutable_logits(probs.back().id)) z = std::normal_distribution<double>(0, 1)(rng);
    }
    CategoricalPolicy pol = old_pol;
    CategoricalPolicy refp = old_pol;
    for (const auto& p : probs) {
      for (auto& z : pol.mutable_logits(p.id)) z += std::normal_distribution<double>(0, 0.3)(rng);
      for (auto& z : refp.mutable_logits(p.id)) z += std::normal_distribution<double>(0, 0.5)(rng);
    }
    std::vector<RolloutGroup> gs;
    const int ngroups = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int j = 0; j < ngroups; ++j) {
      const auto& p = probs[std::uniform_int_distribution<std::size_t>(0, probs.size() - 1)(rng)];
      RolloutGroup g{ConditioningContext{p, "reference", "x"}, {}};
      std::vector<double> rewards;
      const int G = std::uniform_int_distribution<int>(2, 6)(rng);
      for (int i = 0; i < G; ++i) {
        const std::size_t k = old_pol.sample(p.id, rng);
        const double r = std::uniform_int_distribution<int>(0, 4)(rng) * 0.5;
        g.samples.push_back(sample(k, r, old_pol.log_prob(p.id, k), 0, 0));
        rewards.push_back(r);
      }
      const auto a = group_advantages(rewards, 1e-6);
      for (std::size_t i = 0; i < a.size(); ++i) g.samples[i].advantage = a[i];
      gs.push_back(std::move(g));
    }
    AlgoConfig cfg = use_dapo ? dapo() : grpo(0.2, 0.001, std::make_shared<const CategoricalPolicy>(refp));
    if (use_dapo) gs = dynamic_filter(std::move(gs));
    if (gs.empty()) continue;

    // skip configurations sitting on a clip kink, where the objective is not differentiable
    refresh_logprobs(gs, pol);
    bool near_kink = false;
    const double lo = 0.8;
    const double hi = use_dapo ? 1.28 : 1.2;
    for (const auto& g : gs) {
      for (double r : importance_ratios(g)) near_kink = near_kink || std::abs(r - lo) < 1e-4 || std::abs(r - hi) < 1e-4;
    }
    if (near_kink) continue;

    const auto ga = surrogate_gradient(pol, gs, cfg);
    const auto fd = oracle::finite_difference(pol, gs, cfg, 1e-6);
    CHECK(oracle::relative_error(ga, fd) <= 1e-5);
    ++checked;
  }
  CHECK(checked >= 150);
}

TEST_CASE("algorithm config validation") {
  AlgoConfig c;
  CHECK_NOTHROW(c.validate());
  c.group_size = 1;
  CHECK_THROWS(c.validate());
  c = dapo();
  c.variant = DapoParams{0.3, 0.2};
  CHECK_THROWS(c.validate());
  c = grpo(0.0, 0.001, nullptr);
  CHECK_THROWS(c.validate());
  c = AlgoConfig{};
  c.adv_delta = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("char_count counts code points") {
  CHECK(char_count("") == 0);
  CHECK(char_count("abc") == 3);
  CHECK(char_count("caf\xC3\xA9") == 4);
  CHECK(char_count("\xE2\x89\xA4") == 1);
}

TEST_CASE("execute_and_score fills observations and rewards") {
  const auto fx = toy::convergence_set(1, 4);
  const ProblemInstance& p = fx.problems[0];
  RolloutGroup g{build_context(p, "reference"), {}};
  for (std::size_t k = 0; k < p.candidate_pool.size(); ++k) {
    RolloutSample s;
    s.candidate_index = k;
    s.output = p.candidate_pool[k];
    g.samples.push_back(s);
  }
  AlgoConfig cfg;
  execute_and_score(g, embedded_backend(), cfg);
  for (std::size_t k = 0; k < g.samples.size(); ++k) {
    const auto& s = g.samples[k];
    CHECK(s.reward.total == s.reward.format_part + s.reward.answer_part);
    if (k == fx.answer_index[0]) {
      CHECK(s.reward.total == 2.0);
    } else {
      CHECK(s.reward.answer_part == 0.0);
    }
    if (!s.well_formed) {
      CHECK_FALSE(s.observation.executed);
      CHECK(s.observation.log.find("schema violation") != std::string::npos);
    } else {
      CHECK(s.code_chars > 0);
      CHECK(s.think_chars > 0);
    }
  }
}

TEST_CASE("toy pools hold exactly one verifying candidate") {
  AlgoConfig cfg;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto fx = toy::convergence_set(10, seed);
    for (std::size_t i = 0; i < fx.problems.size(); ++i) {
      const ProblemInstance& p = fx.problems[i];
      RolloutGroup g{build_context(p, "reference"), {}};
      for (const auto& c : p.candidate_pool) {
        RolloutSample s;
        s.output = c;
        g.samples.push_back(s);
      }
      execute_and_score(g, embedded_backend(), cfg);
      for (std::size_t k = 0; k < g.samples.size(); ++k) {
        CHECK(g.samples[k].reward.answer_part == (k == fx.answer_index[i] ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("train_loop learns the toy pools and is deterministic") {
  const auto fx = toy::convergence_set(6, 21);
  const Environment env = Environment::single(embedded_backend());
  for (bool use_dapo : {false, true}) {
    AlgoConfig cfg = use_dapo ? dapo() : AlgoConfig{};
    cfg.max_steps = 40;
    cfg.batch_size = 8;
    std::vector<StepMetrics> streamed;
    const auto a = train_loop(fx.problems, env, CategoricalPolicy{}, cfg, 5,
                              [&](const StepMetrics& m) { streamed.push_back(m); });
    const auto b = train_loop(fx.problems, env, CategoricalPolicy{}, cfg, 5);
    CHECK(a.policy.to_json() == b.policy.to_json());
    REQUIRE(streamed.size() == 40);
    CHECK(streamed.back().step == 40);
    for (std::size_t i = 0; i < fx.problems.size(); ++i) {
      CHECK(a.policy.greedy(fx.problems[i].id) == fx.answer_index[i]);
    }
    CHECK(streamed.back().mean_total > streamed.front().mean_total);
  }
}

TEST_CASE("DAPO with no verifying candidate leaves the policy unchanged") {
  ProblemInstance p = problem("dead", 2);
  p.candidate_pool = {"<think>a</think><code>maximize\n x\nsubject to\n x >= 1\n x <= 0\nend</code>",
                      "<think>b</think><code>maximize\n y\nsubject to\n y >= 3\n y <= 2\nend</code>"};
  p.truth = Outcome::numeric(1.0);
  AlgoConfig cfg = dapo();
  cfg.max_steps = 5;
  cfg.batch_size = 2;
  cfg.group_size = 4;
  const auto r = train_loop({p}, Environment::single(embedded_backend()), CategoricalPolicy{}, cfg, 1);
  CHECK(r.metrics.size() == 5);
  for (const auto& m : r.metrics) CHECK(m.groups_retained == 0);
  for (double z : r.policy.logits("dead")) CHECK(z == 0.0);
}

TEST_CASE("train_loop configuration faults") {
  ProblemInstance p = problem("x", 2);
  p.candidate_pool.clear();
  CHECK_THROWS(train_loop({p}, Environment::single(embedded_backend()), CategoricalPolicy{}, AlgoConfig{}, 1));
  CHECK_THROWS(train_loop({}, Environment::single(embedded_backend()), CategoricalPolicy{}, AlgoConfig{}, 1));
  CHECK_THROWS_AS(Environment::uniform({}), ConfigError);
  CHECK_THROWS_AS(Environment::uniform({embedded_backend("a"), embedded_backend("a")}), ConfigError);
}
