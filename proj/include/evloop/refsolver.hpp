#pragma once

#include <chrono>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace evloop::refsolver {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { kMaximize, kMinimize };
enum class Comparator { kLessEqual, kGreaterEqual, kEqual };

struct Term {
  std::size_t var;
  double coef;
};

struct Variable {
  std::string name;
  double lower = 0.0;
  double upper = kInf;
  bool integer = false;
};

struct Constraint {
  std::string name;  // may be empty
  std::vector<Term> terms;
  Comparator cmp = Comparator::kLessEqual;
  double rhs = 0.0;
};

/// An LP/MILP over named variables. Variables are indexed in order of first appearance;
/// objective and constraint terms refer to those indices and hold no duplicates.
struct LinearModel {
  Sense sense = Sense::kMaximize;
  std::vector<Variable> variables;
  std::vector<Term> objective;
  double objective_offset = 0.0;
  std::vector<Constraint> constraints;

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t add_variable(std::string_view name);

  /// Throws std::invalid_argument on out-of-range indices, NaN data, or lower > upper.
  void validate() const;

  double evaluate_objective(const std::vector<double>& x) const;
  std::size_t integer_count() const;
};

enum class SolveStatus { kOptimal, kInfeasible, kUnbounded };

struct SolveResult {
  SolveStatus status = SolveStatus::kInfeasible;
  std::optional<double> objective_value;  // present iff kOptimal
  std::vector<double> assignment;         // aligned with LinearModel::variables; empty unless kOptimal
  std::size_t nodes = 0;                  // LP relaxations solved
};

struct SolverOptions {
  double feasibility_tol = 1e-7;
  double integrality_tol = 1e-6;
  double gap_tol = 1e-9;
  double pivot_tol = 1e-9;
  double optimality_tol = 1e-9;
  std::size_t max_nodes = 100000;
  std::size_t max_pivots = 200000;
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

struct ParseError {
  std::size_t line = 0;
  std::size_t column = 0;
  std::string message;

  std::string what() const;
};

class SolverFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NumericalError : public SolverFault {
 public:
  using SolverFault::SolverFault;
};
class NodeBudgetExceeded : public SolverFault {
 public:
  using SolverFault::SolverFault;
};
class SolveTimeout : public SolverFault {
 public:
  using SolverFault::SolverFault;
};

using ModelParseResult = std::variant<LinearModel, ParseError>;

/// Parses the LP-subset text format:
///
///   maximize | minimize     objective (may span lines, optional `name:` prefix)
///   subject to              one constraint per line, `[name:] expr cmp expr`
///   bounds                  `l <= x`, `x <= u`, `l <= x <= u`, `x = v`, `x free`
///   integers                whitespace-separated variable names
///   end
///
/// Keywords are case-insensitive and `\` starts a comment. Coefficients may be
/// rationals (`2/3 x`); variables may appear on both sides of a comparator.
ModelParseResult parse_model(std::string_view text);

/// Continuous relaxation via two-phase dense-tableau simplex with Bland's rule.
SolveResult simplex_solve(const LinearModel& model, const SolverOptions& options = {});

/// Best-bound branch-and-bound over simplex relaxations.
SolveResult milp_solve(const LinearModel& model, const SolverOptions& options = {});

const char* to_string(SolveStatus status);

/// `STATUS: <label>` followed by the solution line or `No Best Solution`.
std::string emit_result_text(const SolveResult& result);

/// Up to 12 significant digits, shortest form, locale-independent.
std::string format_value(double value);

}  // namespace evloop::refsolver
