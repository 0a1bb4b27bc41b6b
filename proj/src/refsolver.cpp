#include "evloop/refsolver.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <queue>
#include <sstream>

namespace evloop::refsolver {

std::optional<std::size_t> LinearModel::find(std::string_view name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t LinearModel::add_variable(std::string_view name) {
  if (auto idx = find(name)) return *idx;
  variables.push_back(Variable{std::string(name)});
  return variables.size() - 1;
}

void LinearModel::validate() const {
  auto check_terms = [&](const std::vector<Term>& terms, const char* where) {
    for (const Term& t : terms) {
      if (t.var >= variables.size()) throw std::invalid_argument(std::string(where) + ": variable index out of range");
      if (!std::isfinite(t.coef)) throw std::invalid_argument(std::string(where) + ": non-finite coefficient");
    }
  };
  check_terms(objective, "objective");
  if (!std::isfinite(objective_offset)) throw std::invalid_argument("objective: non-finite offset");
  for (const Constraint& c : constraints) {
    check_terms(c.terms, "constraint");
    if (!std::isfinite(c.rhs)) throw std::invalid_argument("constraint: non-finite right-hand side");
  }
  for (const Variable& v : variables) {
    if (std::isnan(v.lower) || std::isnan(v.upper) || v.lower > v.upper || v.lower == kInf || v.upper == -kInf) {
      throw std::invalid_argument("invalid bounds for variable '" + v.name + "'");
    }
  }
}

double LinearModel::evaluate_objective(const std::vector<double>& x) const {
  double z = objective_offset;
  for (const Term& t : objective) z += t.coef * x[t.var];
  return z;
}

std::size_t LinearModel::integer_count() const {
  return static_cast<std::size_t>(std::count_if(variables.begin(), variables.end(), [](const Variable& v) { return v.integer; }));
}

std::string ParseError::what() const {
  std::ostringstream os;
  os << "line " << line << ", column " << column << ": " << message;
  return os.str();
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::kOptimal: return "OPTIMAL";
    case SolveStatus::kInfeasible: return "INFEASIBLE";
    case SolveStatus::kUnbounded: return "UNBOUNDED";
  }
  return "ERROR";
}

namespace {

void check_deadline(const SolverOptions& options) {
  if (options.deadline && std::chrono::steady_clock::now() >= *options.deadline) {
    throw SolveTimeout("solver deadline exceeded");
  }
}

// Each original variable is x = offset + sign * column (+ second column with the
// opposite sign for free variables).
struct ColumnMap {
  double offset = 0.0;
  std::size_t column = 0;
  double sign = 1.0;
  std::optional<std::size_t> negative_column;
};

struct StandardRow {
  std::vector<double> coef;  // over structural columns
  Comparator cmp;
  double rhs;
};

// Dense tableau for: minimize c^T x  s.t.  rows (with slacks/artificials), x >= 0.
class Tableau {
 public:
  Tableau(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), a_((rows + 1) * (cols + 1), 0.0) {}

  double& at(std::size_t r, std::size_t c) { return a_[r * (cols_ + 1) + c]; }
  double at(std::size_t r, std::size_t c) const { return a_[r * (cols_ + 1) + c]; }
  double& rhs(std::size_t r) { return at(r, cols_); }
  double rhs(std::size_t r) const { return at(r, cols_); }
  double& cost(std::size_t c) { return at(rows_, c); }
  double cost(std::size_t c) const { return at(rows_, c); }
  // Stores -z for the current basis.
  double& neg_objective() { return at(rows_, cols_); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  void pivot(std::size_t pr, std::size_t pc) {
    const double p = at(pr, pc);
    for (std::size_t c = 0; c <= cols_; ++c) at(pr, c) /= p;
    at(pr, pc) = 1.0;
    for (std::size_t r = 0; r <= rows_; ++r) {
      if (r == pr) continue;
      const double f = at(r, pc);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c <= cols_; ++c) at(r, c) -= f * at(pr, c);
      at(r, pc) = 0.0;
    }
  }

  void drop_row(std::size_t r) {
    std::vector<double> next;
    next.reserve(rows_ * (cols_ + 1));
    for (std::size_t i = 0; i <= rows_; ++i) {
      if (i == r) continue;
      next.insert(next.end(), a_.begin() + static_cast<std::ptrdiff_t>(i * (cols_ + 1)),
                  a_.begin() + static_cast<std::ptrdiff_t>((i + 1) * (cols_ + 1)));
    }
    a_ = std::move(next);
    --rows_;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> a_;
};

enum class PhaseResult { kOptimal, kUnbounded };

// Bland's rule: lowest-index improving column enters, ties in the ratio test go to
// the lowest-index basic variable.
PhaseResult run_phase(Tableau& t, std::vector<std::size_t>& basis, const std::vector<bool>& allowed,
                      const SolverOptions& options, std::size_t& pivots) {
  for (;;) {
    std::optional<std::size_t> entering;
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (allowed[c] && t.cost(c) < -options.optimality_tol) {
        entering = c;
        break;
      }
    }
    if (!entering) return PhaseResult::kOptimal;

    std::optional<std::size_t> leaving;
    double best_ratio = kInf;
    double max_small = 0.0;
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const double a = t.at(r, *entering);
      if (a > options.pivot_tol) {
        const double ratio = std::max(t.rhs(r), 0.0) / a;
        if (!leaving || ratio < best_ratio || (ratio == best_ratio && basis[r] < basis[*leaving])) {
          leaving = r;
          best_ratio = ratio;
        }
      } else if (a > 0.0) {
        max_small = std::max(max_small, a);
      }
    }
    if (!leaving) {
      if (max_small > options.pivot_tol * 1e-2) {
        throw NumericalError("pivot magnitude below tolerance with no alternative");
      }
      return PhaseResult::kUnbounded;
    }
    if (++pivots > options.max_pivots) throw NumericalError("simplex pivot limit exceeded");
    if ((pivots & 63) == 0) check_deadline(options);
    t.pivot(*leaving, *entering);
    basis[*leaving] = *entering;
  }
}

}  // namespace

SolveResult simplex_solve(const LinearModel& model, const SolverOptions& options) {
  model.validate();
  check_deadline(options);

  // Column layout for the structural part.
  std::vector<ColumnMap> map(model.variables.size());
  std::size_t n_struct = 0;
  std::vector<StandardRow> rows;
  for (std::size_t j = 0; j < model.variables.size(); ++j) {
    const Variable& v = model.variables[j];
    ColumnMap& m = map[j];
    if (std::isfinite(v.lower)) {
      m.offset = v.lower;
      m.column = n_struct++;
    } else if (std::isfinite(v.upper)) {
      m.offset = v.upper;
      m.sign = -1.0;
      m.column = n_struct++;
    } else {
      m.column = n_struct++;
      m.negative_column = n_struct++;
    }
  }
  auto add_affine = [&](std::vector<double>& coef, double& constant, std::size_t var, double a) {
    const ColumnMap& m = map[var];
    constant += a * m.offset;
    coef[m.column] += a * m.sign;
    if (m.negative_column) coef[*m.negative_column] -= a;
  };
  for (std::size_t j = 0; j < model.variables.size(); ++j) {
    const Variable& v = model.variables[j];
    if (std::isfinite(v.lower) && std::isfinite(v.upper)) {
      StandardRow r{std::vector<double>(n_struct, 0.0), Comparator::kLessEqual, v.upper - v.lower};
      r.coef[map[j].column] = 1.0;
      rows.push_back(std::move(r));
    }
  }
  for (const Constraint& c : model.constraints) {
    StandardRow r{std::vector<double>(n_struct, 0.0), c.cmp, 0.0};
    double constant = 0.0;
    for (const Term& t : c.terms) add_affine(r.coef, constant, t.var, t.coef);
    r.rhs = c.rhs - constant;
    rows.push_back(std::move(r));
  }
  // Minimize; maximization is negated.
  const double dir = model.sense == Sense::kMaximize ? -1.0 : 1.0;
  std::vector<double> obj(n_struct, 0.0);
  double obj_constant = 0.0;
  for (const Term& t : model.objective) add_affine(obj, obj_constant, t.var, dir * t.coef);

  for (StandardRow& r : rows) {
    if (r.rhs < 0.0) {
      for (double& a : r.coef) a = -a;
      r.rhs = -r.rhs;
      if (r.cmp == Comparator::kLessEqual) {
        r.cmp = Comparator::kGreaterEqual;
      } else if (r.cmp == Comparator::kGreaterEqual) {
        r.cmp = Comparator::kLessEqual;
      }
    }
  }

  std::size_t n_slack = 0;
  std::size_t n_art = 0;
  for (const StandardRow& r : rows) {
    if (r.cmp != Comparator::kEqual) ++n_slack;
    if (r.cmp != Comparator::kLessEqual) ++n_art;
  }
  const std::size_t m = rows.size();
  const std::size_t art_begin = n_struct + n_slack;
  const std::size_t n_cols = art_begin + n_art;
  Tableau t(m, n_cols);
  std::vector<std::size_t> basis(m);
  {
    std::size_t slack = n_struct;
    std::size_t art = art_begin;
    for (std::size_t i = 0; i < m; ++i) {
      const StandardRow& r = rows[i];
      for (std::size_t c = 0; c < n_struct; ++c) t.at(i, c) = r.coef[c];
      t.rhs(i) = r.rhs;
      if (r.cmp == Comparator::kLessEqual) {
        t.at(i, slack) = 1.0;
        basis[i] = slack++;
      } else if (r.cmp == Comparator::kGreaterEqual) {
        t.at(i, slack++) = -1.0;
        t.at(i, art) = 1.0;
        basis[i] = art++;
      } else {
        t.at(i, art) = 1.0;
        basis[i] = art++;
      }
    }
  }

  std::size_t pivots = 0;
  SolveResult result;
  result.nodes = 1;

  if (n_art > 0) {
    // Phase one: minimize the sum of artificials.
    for (std::size_t c = 0; c <= n_cols; ++c) t.at(m, c) = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (basis[i] >= art_begin) {
        for (std::size_t c = 0; c <= n_cols; ++c) t.at(m, c) -= t.at(i, c);
      }
    }
    for (std::size_t c = art_begin; c < n_cols; ++c) t.cost(c) = 0.0;
    std::vector<bool> allowed(n_cols, true);
    run_phase(t, basis, allowed, options, pivots);
    double scale = 1.0;
    for (const StandardRow& r : rows) scale = std::max(scale, std::abs(r.rhs));
    const double infeasibility = -t.neg_objective();
    if (infeasibility > options.feasibility_tol * scale) {
      result.status = SolveStatus::kInfeasible;
      return result;
    }
    // Drive artificials out of the basis; rows where that is impossible are redundant.
    for (std::size_t i = 0; i < t.rows();) {
      if (basis[i] < art_begin) {
        ++i;
        continue;
      }
      std::optional<std::size_t> col;
      double best = options.pivot_tol;
      for (std::size_t c = 0; c < art_begin; ++c) {
        if (std::abs(t.at(i, c)) > best) {
          best = std::abs(t.at(i, c));
          col = c;
        }
      }
      if (col) {
        t.pivot(i, *col);
        basis[i] = *col;
        ++i;
      } else {
        t.drop_row(i);
        basis.erase(basis.begin() + static_cast<std::ptrdiff_t>(i));
      }
    }
  }

  // Phase two: reduced costs of the true objective for the current basis.
  for (std::size_t c = 0; c <= n_cols; ++c) t.cost(c) = c < n_struct ? obj[c] : 0.0;
  t.neg_objective() = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const std::size_t b = basis[i];
    const double cb = b < n_struct ? obj[b] : 0.0;
    if (cb == 0.0) continue;
    for (std::size_t c = 0; c <= n_cols; ++c) t.at(t.rows(), c) -= cb * t.at(i, c);
  }
  std::vector<bool> allowed(n_cols, false);
  std::fill(allowed.begin(), allowed.begin() + static_cast<std::ptrdiff_t>(art_begin), true);
  if (run_phase(t, basis, allowed, options, pivots) == PhaseResult::kUnbounded) {
    result.status = SolveStatus::kUnbounded;
    return result;
  }

  std::vector<double> col_value(n_cols, 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) col_value[basis[i]] = std::max(t.rhs(i), 0.0);
  result.assignment.resize(model.variables.size());
  for (std::size_t j = 0; j < model.variables.size(); ++j) {
    const ColumnMap& mj = map[j];
    double x = mj.offset + mj.sign * col_value[mj.column];
    if (mj.negative_column) x -= col_value[*mj.negative_column];
    const Variable& v = model.variables[j];
    // Clamp round-off at the bounds.
    if (x < v.lower && x > v.lower - 1e-9 * std::max(1.0, std::abs(v.lower))) x = v.lower;
    if (x > v.upper && x < v.upper + 1e-9 * std::max(1.0, std::abs(v.upper))) x = v.upper;
    result.assignment[j] = x;
  }
  for (const Constraint& c : model.constraints) {
    double lhs = 0.0;
    for (const Term& term : c.terms) lhs += term.coef * result.assignment[term.var];
    const double tol = options.feasibility_tol * std::max(1.0, std::abs(c.rhs));
    const bool ok = c.cmp == Comparator::kLessEqual ? lhs <= c.rhs + tol
                  : c.cmp == Comparator::kGreaterEqual ? lhs >= c.rhs - tol
                                                       : std::abs(lhs - c.rhs) <= tol;
    if (!ok) throw NumericalError("simplex solution violates a constraint beyond tolerance");
  }
  result.status = SolveStatus::kOptimal;
  result.objective_value = model.evaluate_objective(result.assignment);
  return result;
}

namespace {

struct Node {
  std::vector<double> lower;
  std::vector<double> upper;
  double bound;  // relaxation objective in minimization form
  std::size_t id;
  std::vector<double> assignment;
};

struct WorseNode {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.id > b.id;
  }
};

bool is_integral(double x, double tol) { return std::abs(x - std::round(x)) <= tol; }

// Branch on the fractional integer variable closest to one half; ties go to the
// lexicographically smallest name.
std::optional<std::size_t> pick_branch(const LinearModel& model, const std::vector<double>& x, double tol) {
  std::optional<std::size_t> best;
  double best_score = kInf;
  for (std::size_t j = 0; j < model.variables.size(); ++j) {
    if (!model.variables[j].integer || is_integral(x[j], tol)) continue;
    const double frac = x[j] - std::floor(x[j]);
    const double score = std::abs(frac - 0.5);
    if (!best || score < best_score - 1e-12 ||
        (std::abs(score - best_score) <= 1e-12 && model.variables[j].name < model.variables[*best].name)) {
      best = j;
      best_score = score;
    }
  }
  return best;
}

}  // namespace

SolveResult milp_solve(const LinearModel& model, const SolverOptions& options) {
  model.validate();
  if (model.integer_count() == 0) return simplex_solve(model, options);

  const double dir = model.sense == Sense::kMaximize ? -1.0 : 1.0;
  LinearModel work = model;
  for (Variable& v : work.variables) {
    if (!v.integer) continue;
    if (std::isfinite(v.lower)) v.lower = std::ceil(v.lower - options.integrality_tol);
    if (std::isfinite(v.upper)) v.upper = std::floor(v.upper + options.integrality_tol);
  }
  for (const Variable& v : work.variables) {
    if (v.lower > v.upper) return SolveResult{SolveStatus::kInfeasible, std::nullopt, {}, 0};
  }

  std::size_t nodes = 0;
  std::size_t next_id = 0;
  auto solve_node = [&](const std::vector<double>& lo, const std::vector<double>& hi) {
    if (++nodes > options.max_nodes) {
      throw NodeBudgetExceeded("branch-and-bound node budget of " + std::to_string(options.max_nodes) + " exhausted");
    }
    check_deadline(options);
    for (std::size_t j = 0; j < work.variables.size(); ++j) {
      work.variables[j].lower = lo[j];
      work.variables[j].upper = hi[j];
    }
    return simplex_solve(work, options);
  };

  std::vector<double> root_lo, root_hi;
  for (const Variable& v : work.variables) {
    root_lo.push_back(v.lower);
    root_hi.push_back(v.upper);
  }
  SolveResult root = solve_node(root_lo, root_hi);
  if (root.status == SolveStatus::kInfeasible) {
    root.nodes = nodes;
    return root;
  }
  if (root.status == SolveStatus::kUnbounded) {
    // The MILP is unbounded iff the relaxation is and an integer point exists.
    LinearModel feas = model;
    feas.objective.clear();
    feas.objective_offset = 0.0;
    SolverOptions sub = options;
    sub.max_nodes = options.max_nodes > nodes ? options.max_nodes - nodes : 1;
    SolveResult probe = milp_solve(feas, sub);
    SolveResult out;
    out.status = probe.status == SolveStatus::kOptimal ? SolveStatus::kUnbounded : SolveStatus::kInfeasible;
    out.nodes = nodes + probe.nodes;
    return out;
  }

  std::optional<Node> incumbent;
  auto improves = [&](double bound) { return !incumbent || bound < incumbent->bound - options.gap_tol; };

  std::priority_queue<Node, std::vector<Node>, WorseNode> open;
  auto consider = [&](std::vector<double> lo, std::vector<double> hi, SolveResult lp) {
    if (lp.status != SolveStatus::kOptimal) return;
    const double bound = dir * *lp.objective_value;
    if (!improves(bound)) return;
    Node node{std::move(lo), std::move(hi), bound, next_id++, std::move(lp.assignment)};
    if (!pick_branch(model, node.assignment, options.integrality_tol)) {
      incumbent = std::move(node);
    } else {
      open.push(std::move(node));
    }
  };
  consider(root_lo, root_hi, std::move(root));

  while (!open.empty()) {
    Node node = open.top();
    open.pop();
    if (!improves(node.bound)) break;  // best-bound order: nothing left can improve
    const std::size_t j = *pick_branch(model, node.assignment, options.integrality_tol);
    const double x = node.assignment[j];

    std::vector<double> down_hi = node.upper;
    down_hi[j] = std::floor(x);
    if (node.lower[j] <= down_hi[j]) {
      SolveResult lp = solve_node(node.lower, down_hi);
      consider(node.lower, std::move(down_hi), std::move(lp));
    }
    std::vector<double> up_lo = node.lower;
    up_lo[j] = std::ceil(x);
    if (up_lo[j] <= node.upper[j]) {
      SolveResult lp = solve_node(up_lo, node.upper);
      consider(std::move(up_lo), node.upper, std::move(lp));
    }
  }

  SolveResult out;
  out.nodes = nodes;
  if (!incumbent) {
    out.status = SolveStatus::kInfeasible;
    return out;
  }
  out.status = SolveStatus::kOptimal;
  out.assignment = std::move(incumbent->assignment);
  for (std::size_t j = 0; j < model.variables.size(); ++j) {
    if (model.variables[j].integer) {
      out.assignment[j] = std::round(out.assignment[j]);
      if (out.assignment[j] == 0.0) out.assignment[j] = 0.0;  // drop negative zero
    }
  }
  out.objective_value = model.evaluate_objective(out.assignment);
  return out;
}

std::string format_value(double value) {
  if (value == 0.0) value = 0.0;
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 12);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string emit_result_text(const SolveResult& result) {
  std::string out = "STATUS: ";
  out += to_string(result.status);
  out += '\n';
  if (result.status == SolveStatus::kOptimal && result.objective_value) {
    out += "Just print the best solution: ";
    out += format_value(*result.objective_value);
  } else {
    out += "No Best Solution";
  }
  return out;
}

}  // namespace evloop::refsolver
