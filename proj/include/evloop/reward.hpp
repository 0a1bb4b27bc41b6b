#pragma once

#include <string>
#include <string_view>
#include <variant>

#include "evloop/harness.hpp"
#include "evloop/protocol.hpp"

namespace evloop {

/// Ground truth: a finite optimal objective, or a non-numeric status label.
class Outcome {
 public:
  static Outcome numeric(double value);
  /// Only INFEASIBLE and UNBOUNDED are accepted.
  static Outcome status(std::string_view label);

  bool is_numeric() const { return std::holds_alternative<double>(value_); }
  double value() const { return std::get<double>(value_); }
  const std::string& label() const { return std::get<std::string>(value_); }

  std::string to_string() const;
  bool operator==(const Outcome&) const = default;

 private:
  explicit Outcome(std::variant<double, std::string> v) : value_(std::move(v)) {}
  std::variant<double, std::string> value_;
};

struct Tolerances {
  double eps_abs = 1e-4;
  double eps_rel = 1e-4;
  double delta = 1e-12;

  void validate() const;
};

struct RewardBreakdown {
  double format_part = 0.0;
  double answer_part = 0.0;
  double total = 0.0;
};

/// |v - a| < eps_abs  or  |v - a| / max(|a|, delta) < eps_rel. Strict inequalities;
/// not symmetric in (v, a).
bool is_close(double v, double a, const Tolerances& tol = {});

/// 1 iff the run completed and either the numeric objective is close to a numeric truth
/// under a numeric status, or the status equals a status truth.
double answer_reward(const Observation& obs, const Outcome& truth, const BackendSpec& backend,
                     const Tolerances& tol = {});

RewardBreakdown total_reward(std::string_view raw, const Observation& obs, const Outcome& truth,
                             const TagWeights& weights, const BackendSpec& backend, const Tolerances& tol = {});

}  // namespace evloop
