#include "evloop/reward.hpp"

#include <cmath>
#include <stdexcept>

#include "evloop/refsolver.hpp"

namespace evloop {

Outcome Outcome::numeric(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("numeric outcome must be finite");
  return Outcome(value);
}

Outcome Outcome::status(std::string_view label) {
  if (label != "INFEASIBLE" && label != "UNBOUNDED") {
    throw std::invalid_argument("status outcome must be INFEASIBLE or UNBOUNDED, got '" + std::string(label) + "'");
  }
  return Outcome(std::string(label));
}

std::string Outcome::to_string() const { return is_numeric() ? refsolver::format_value(value()) : label(); }

void Tolerances::validate() const {
  if (!(eps_abs > 0.0) || !(eps_rel > 0.0) || !(delta > 0.0)) {
    throw std::invalid_argument("tolerances must be strictly positive");
  }
}

bool is_close(double v, double a, const Tolerances& tol) {
  const double diff = std::abs(v - a);
  return diff < tol.eps_abs || diff / std::max(std::abs(a), tol.delta) < tol.eps_rel;
}

double answer_reward(const Observation& obs, const Outcome& truth, const BackendSpec& backend, const Tolerances& tol) {
  if (!obs.executed) return 0.0;
  if (truth.is_numeric()) {
    // Non-finite objectives count as absent.
    if (!backend.is_numeric_status(obs.status) || !obs.objective || !std::isfinite(*obs.objective)) return 0.0;
    return is_close(*obs.objective, truth.value(), tol) ? 1.0 : 0.0;
  }
  return obs.status == truth.label() ? 1.0 : 0.0;
}

RewardBreakdown total_reward(std::string_view raw, const Observation& obs, const Outcome& truth,
                             const TagWeights& weights, const BackendSpec& backend, const Tolerances& tol) {
  RewardBreakdown r;
  r.format_part = format_reward(raw, weights);
  r.answer_part = answer_reward(obs, truth, backend, tol);
  r.total = r.format_part + r.answer_part;
  return r;
}

}  // namespace evloop
