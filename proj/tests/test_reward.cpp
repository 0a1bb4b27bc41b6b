#include <doctest.h>

#include <random>

#include "evloop/reward.hpp"
#include "support/oracles.hpp"

using namespace evloop;

namespace {

Observation obs(bool c, std::string status, std::optional<double> v = std::nullopt) {
  Observation o;
  o.executed = c;
  o.status = std::move(status);
  o.objective = v;
  return o;
}

const std::string kGood = "<think>m</think>\n<code>c</code>";

}  // namespace

TEST_CASE("is_close worked examples") {
  CHECK(is_close(42, 42));
  CHECK(is_close(5e-5, 0));
  CHECK_FALSE(is_close(100.02, 100));
  CHECK(is_close(100.005, 100));
}

TEST_CASE("is_close uses strict inequalities and is asymmetric") {
  Tolerances t{0.5, 0.25, 1e-12};
  CHECK_FALSE(is_close(2.5, 2.0, t));  // |d| = 0.5 is not < 0.5; rel 0.25 is not < 0.25
  CHECK(is_close(2.49, 2.0, t));
  // the relative branch divides by |a|, so argument order matters
  Tolerances r{1e-9, 0.1, 1e-12};
  CHECK_FALSE(is_close(10.5, 9.5, r));  // 1 / 9.5
  CHECK(is_close(9.5, 10.5, r));        // 1 / 10.5
}

TEST_CASE("is_close agrees with a direct evaluation on random pairs") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> mag(-8, 4);
  std::uniform_real_distribution<double> unit(-1, 1);
  for (int i = 0; i < 5000; ++i) {
    const double a = unit(rng) * std::pow(10.0, mag(rng));
    const double v = a + unit(rng) * std::pow(10.0, mag(rng));
    CHECK(is_close(v, a) == oracle::is_close_direct(v, a));
  }
}

TEST_CASE("tolerances must be positive") {
  CHECK_THROWS(Tolerances{0, 1e-4, 1e-12}.validate());
  CHECK_THROWS(Tolerances{1e-4, -1, 1e-12}.validate());
  CHECK_THROWS(Tolerances{1e-4, 1e-4, 0}.validate());
}

TEST_CASE("Outcome construction") {
  CHECK(Outcome::numeric(29.0).is_numeric());
  CHECK(Outcome::status("INFEASIBLE").label() == "INFEASIBLE");
  CHECK_THROWS(Outcome::status("MAYBE"));
  CHECK_THROWS(Outcome::numeric(std::numeric_limits<double>::infinity()));
  CHECK(Outcome::numeric(29.0) == Outcome::numeric(29.0));
  CHECK_FALSE(Outcome::numeric(29.0) == Outcome::status("UNBOUNDED"));
}

TEST_CASE("answer_reward cases") {
  const BackendSpec b = embedded_backend();
  CHECK(answer_reward(obs(true, "OPTIMAL", 29.0), Outcome::numeric(29.0), b) == 1.0);
  CHECK(answer_reward(obs(false, "ERROR"), Outcome::numeric(29.0), b) == 0.0);
  CHECK(answer_reward(obs(false, "INFEASIBLE"), Outcome::status("INFEASIBLE"), b) == 0.0);
  CHECK(answer_reward(obs(true, "INFEASIBLE"), Outcome::status("INFEASIBLE"), b) == 1.0);
  CHECK(answer_reward(obs(true, "OPTIMAL", 30.0), Outcome::numeric(29.0), b) == 0.0);
  CHECK(answer_reward(obs(true, "UNBOUNDED"), Outcome::status("INFEASIBLE"), b) == 0.0);
  CHECK(answer_reward(obs(true, "OPTIMAL"), Outcome::numeric(29.0), b) == 0.0);
  CHECK(answer_reward(obs(true, "INFEASIBLE", 29.0), Outcome::numeric(29.0), b) == 0.0);
  CHECK(answer_reward(obs(true, "OPTIMAL", std::numeric_limits<double>::infinity()), Outcome::numeric(29.0), b) == 0.0);

  BackendSpec wide = b;
  wide.statuses.push_back("FEASIBLE");
  wide.numeric_statuses.push_back("FEASIBLE");
  CHECK(answer_reward(obs(true, "FEASIBLE", 29.0), Outcome::numeric(29.0), wide) == 1.0);
}

TEST_CASE("total_reward composition") {
  const BackendSpec b = embedded_backend();
  const Outcome truth = Outcome::numeric(29.0);
  RewardBreakdown r = total_reward(kGood, obs(true, "OPTIMAL", 29.0), truth, TagWeights{}, b);
  CHECK(r.format_part == 1.0);
  CHECK(r.answer_part == 1.0);
  CHECK(r.total == 2.0);

  r = total_reward(kGood, obs(true, "OPTIMAL", 30.0), truth, TagWeights{}, b);
  CHECK(r.total == 1.0);

  r = total_reward("<think>m</think><code>c", obs(false, "ERROR"), truth, TagWeights{}, b);
  CHECK(r.total <= 0.5);
  CHECK(r.total == r.format_part + r.answer_part);
}

TEST_CASE("perturbations below the tolerance scale never flip the answer reward") {
  const BackendSpec b = embedded_backend();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(-3, 5);
  std::uniform_real_distribution<double> unit(-1, 1);
  for (int i = 0; i < 2000; ++i) {
    const double a = unit(rng) * std::pow(10.0, scale(rng));
    const double slack = std::min(1e-4, 1e-4 * std::abs(a)) / 2;
    const double v = a + unit(rng) * slack * 0.999;
    CHECK(answer_reward(obs(true, "OPTIMAL", v), Outcome::numeric(a), b) == 1.0);
  }
}
