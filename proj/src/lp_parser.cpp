#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "evloop/refsolver.hpp"

namespace evloop::refsolver {

namespace {

enum class Tok { kNumber, kIdent, kPlus, kMinus, kStar, kSlash, kLParen, kRParen, kColon, kCmp, kCaret };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  Comparator cmp = Comparator::kLessEqual;
  std::size_t line = 0;
  std::size_t column = 0;
};

struct Fail {
  ParseError error;
};

[[noreturn]] void fail(std::size_t line, std::size_t column, std::string message) {
  throw Fail{ParseError{line, column, std::move(message)}};
}

[[noreturn]] void fail(const Token& t, std::string message) { fail(t.line, t.column, std::move(message)); }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '[' || c == ']';
}

std::vector<Token> tokenize(std::string_view line, std::size_t line_no, std::size_t col_offset) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto col = [&](std::size_t pos) { return col_offset + pos + 1; };
  while (i < line.size()) {
    const char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.line = line_no;
    t.column = col(i);
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
      std::size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      if (j < line.size() && line[j] == '.') {
        ++j;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      }
      if (j < line.size() && (line[j] == 'e' || line[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < line.size() && (line[k] == '+' || line[k] == '-')) ++k;
        if (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) {
          while (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) ++k;
          j = k;
        }
      }
      t.kind = Tok::kNumber;
      t.text = std::string(line.substr(i, j - i));
      const char* first = t.text.data();
      const char* last = first + t.text.size();
      if (*first == '.') {
        t.number = std::strtod(t.text.c_str(), nullptr);
      } else {
        auto [ptr, ec] = std::from_chars(first, last, t.number);
        if (ec != std::errc() || ptr != last) fail(t, "invalid number '" + t.text + "'");
      }
      if (!std::isfinite(t.number)) fail(t, "number out of range '" + t.text + "'");
      i = j;
    } else if (ident_start(c)) {
      std::size_t j = i;
      while (j < line.size() && ident_char(line[j])) ++j;
      t.kind = Tok::kIdent;
      t.text = std::string(line.substr(i, j - i));
      i = j;
    } else if (c == '<' || c == '>' || c == '=') {
      t.kind = Tok::kCmp;
      std::size_t j = i + 1;
      if (j < line.size() && (line[j] == '=' || line[j] == '<' || line[j] == '>')) ++j;
      t.text = std::string(line.substr(i, j - i));
      if (t.text == "<=" || t.text == "=<" || t.text == "<") {
        t.cmp = Comparator::kLessEqual;
      } else if (t.text == ">=" || t.text == "=>" || t.text == ">") {
        t.cmp = Comparator::kGreaterEqual;
      } else if (t.text == "=" || t.text == "==") {
        t.cmp = Comparator::kEqual;
      } else {
        fail(t, "invalid comparator '" + t.text + "'");
      }
      i = j;
    } else {
      switch (c) {
        case '+': t.kind = Tok::kPlus; break;
        case '-': t.kind = Tok::kMinus; break;
        case '*': t.kind = Tok::kStar; break;
        case '/': t.kind = Tok::kSlash; break;
        case '(': t.kind = Tok::kLParen; break;
        case ')': t.kind = Tok::kRParen; break;
        case ':': t.kind = Tok::kColon; break;
        case '^': t.kind = Tok::kCaret; break;
        default: fail(line_no, col(i), std::string("unexpected character '") + c + "'");
      }
      t.text = std::string(1, c);
      ++i;
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Linear expression accumulated as coefficients keyed by variable index.
struct Affine {
  std::map<std::size_t, double> coef;
  double constant = 0.0;
};

class ExprParser {
 public:
  ExprParser(const std::vector<Token>& toks, std::size_t begin, std::size_t end, LinearModel& model)
      : toks_(toks), pos_(begin), end_(end), model_(model) {}

  // Parses terms until a comparator or the end of the range.
  Affine parse(std::size_t eol_line, std::size_t eol_col) {
    Affine out;
    bool first = true;
    while (pos_ < end_ && toks_[pos_].kind != Tok::kCmp) {
      double sign = 1.0;
      bool had_sign = false;
      while (pos_ < end_ && (toks_[pos_].kind == Tok::kPlus || toks_[pos_].kind == Tok::kMinus)) {
        if (toks_[pos_].kind == Tok::kMinus) sign = -sign;
        had_sign = true;
        ++pos_;
      }
      if (!first && !had_sign) fail(toks_[pos_], "expected '+' or '-' between terms");
      if (pos_ >= end_ || toks_[pos_].kind == Tok::kCmp) {
        if (pos_ < end_) fail(toks_[pos_], "dangling sign before comparator");
        fail(eol_line, eol_col, "dangling sign at end of expression");
      }
      parse_term(sign, out);
      first = false;
    }
    if (first) {
      if (pos_ < end_) fail(toks_[pos_], "empty expression");
      fail(eol_line, eol_col, "empty expression");
    }
    return out;
  }

  std::size_t pos() const { return pos_; }

 private:
  const Token& peek() const { return toks_[pos_]; }
  bool at(Tok k) const { return pos_ < end_ && toks_[pos_].kind == k; }

  double parse_number_literal() {
    if (!at(Tok::kNumber)) fail(pos_ < end_ ? peek() : toks_[end_ - 1], "expected a number");
    double v = peek().number;
    ++pos_;
    if (at(Tok::kSlash)) {
      ++pos_;
      if (!at(Tok::kNumber)) fail(pos_ < end_ ? peek() : toks_[end_ - 1], "expected a denominator");
      const Token& den = peek();
      if (den.number == 0.0) fail(den, "division by zero");
      v /= den.number;
      ++pos_;
    }
    return v;
  }

  void parse_term(double sign, Affine& out) {
    double coef = 1.0;
    bool has_coef = false;
    if (at(Tok::kNumber)) {
      coef = parse_number_literal();
      has_coef = true;
    } else if (at(Tok::kLParen)) {
      const Token& open = peek();
      ++pos_;
      double inner_sign = 1.0;
      while (at(Tok::kPlus) || at(Tok::kMinus)) {
        if (at(Tok::kMinus)) inner_sign = -inner_sign;
        ++pos_;
      }
      if (at(Tok::kIdent)) fail(peek(), "parenthesized variables are not supported");
      coef = inner_sign * parse_number_literal();
      if (!at(Tok::kRParen)) fail(open, "unbalanced parenthesis");
      ++pos_;
      has_coef = true;
    }
    if (at(Tok::kStar)) {
      if (!has_coef) fail(peek(), "unexpected '*'");
      ++pos_;
      if (!at(Tok::kIdent)) fail(pos_ < end_ ? peek() : toks_[end_ - 1], "expected a variable after '*'");
    }
    if (at(Tok::kIdent)) {
      const Token& name = peek();
      ++pos_;
      if (at(Tok::kStar) || at(Tok::kIdent) || at(Tok::kCaret) || at(Tok::kLParen)) {
        fail(peek(), "nonlinear term involving '" + name.text + "'");
      }
      if (at(Tok::kNumber)) fail(peek(), "coefficient after variable '" + name.text + "'");
      const std::size_t idx = model_.add_variable(name.text);
      out.coef[idx] += sign * coef;
    } else if (has_coef) {
      if (at(Tok::kCaret)) fail(peek(), "nonlinear term (power)");
      if (at(Tok::kLParen)) fail(peek(), "nonlinear term (product)");
      out.constant += sign * coef;
    } else {
      fail(peek(), "unexpected '" + peek().text + "'");
    }
  }

  const std::vector<Token>& toks_;
  std::size_t pos_;
  std::size_t end_;
  LinearModel& model_;
};

std::vector<Term> to_terms(const Affine& a) {
  std::vector<Term> out;
  for (const auto& [var, c] : a.coef) {
    if (c != 0.0) out.push_back({var, c});
  }
  return out;
}

enum class Section { kNone, kObjective, kConstraints, kBounds, kIntegers, kBinaries, kEnd };

struct Keyword {
  Section section;
  std::size_t length;  // characters consumed from the original line
  std::optional<Sense> sense;
};

std::optional<Keyword> match_keyword(std::string_view line, std::size_t line_no, std::size_t col_offset) {
  const std::string low = lower(line);
  auto word_match = [&](std::string_view kw) -> bool {
    if (!std::string_view(low).starts_with(kw)) return false;
    return low.size() == kw.size() || std::isspace(static_cast<unsigned char>(low[kw.size()]));
  };
  struct Entry {
    std::string_view kw;
    Section section;
    std::optional<Sense> sense;
  };
  static const Entry kTable[] = {
      {"maximize", Section::kObjective, Sense::kMaximize},
      {"maximise", Section::kObjective, Sense::kMaximize},
      {"maximum", Section::kObjective, Sense::kMaximize},
      {"max", Section::kObjective, Sense::kMaximize},
      {"minimize", Section::kObjective, Sense::kMinimize},
      {"minimise", Section::kObjective, Sense::kMinimize},
      {"minimum", Section::kObjective, Sense::kMinimize},
      {"min", Section::kObjective, Sense::kMinimize},
      {"subject to", Section::kConstraints, std::nullopt},
      {"such that", Section::kConstraints, std::nullopt},
      {"s.t.", Section::kConstraints, std::nullopt},
      {"st", Section::kConstraints, std::nullopt},
      {"bounds", Section::kBounds, std::nullopt},
      {"bound", Section::kBounds, std::nullopt},
      {"integers", Section::kIntegers, std::nullopt},
      {"integer", Section::kIntegers, std::nullopt},
      {"generals", Section::kIntegers, std::nullopt},
      {"general", Section::kIntegers, std::nullopt},
      {"binaries", Section::kBinaries, std::nullopt},
      {"binary", Section::kBinaries, std::nullopt},
      {"end", Section::kEnd, std::nullopt},
  };
  for (const auto& e : kTable) {
    if (word_match(e.kw)) return Keyword{e.section, e.kw.size(), e.sense};
  }
  static const std::string_view kUnsupported[] = {"semi-continuous", "semis", "semi", "sos", "sos1", "sos2", "pwl"};
  for (auto kw : kUnsupported) {
    if (word_match(kw)) fail(line_no, col_offset + 1, "unsupported section '" + std::string(kw) + "'");
  }
  return std::nullopt;
}

std::optional<double> infinity_literal(const Token& t) {
  if (t.kind != Tok::kIdent) return std::nullopt;
  const std::string low = lower(t.text);
  if (low == "inf" || low == "infinity") return kInf;
  return std::nullopt;
}

// Parses `[+|-] number|inf` starting at toks[i]; advances i.
std::optional<double> bound_value(const std::vector<Token>& toks, std::size_t& i) {
  std::size_t j = i;
  double sign = 1.0;
  if (j < toks.size() && (toks[j].kind == Tok::kPlus || toks[j].kind == Tok::kMinus)) {
    if (toks[j].kind == Tok::kMinus) sign = -1.0;
    ++j;
  }
  if (j >= toks.size()) return std::nullopt;
  if (toks[j].kind == Tok::kNumber) {
    double v = toks[j].number;
    ++j;
    if (j + 1 < toks.size() && toks[j].kind == Tok::kSlash && toks[j + 1].kind == Tok::kNumber) {
      if (toks[j + 1].number == 0.0) fail(toks[j + 1], "division by zero");
      v /= toks[j + 1].number;
      j += 2;
    }
    i = j;
    return sign * v;
  }
  if (auto inf = infinity_literal(toks[j])) {
    i = j + 1;
    return sign * *inf;
  }
  return std::nullopt;
}

class ModelBuilder {
 public:
  LinearModel build(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    std::vector<Token> objective_tokens;
    std::size_t objective_line = 0;
    std::size_t last_line = 1;
    while (start <= text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      std::string_view raw = text.substr(start, nl - start);
      ++line_no;
      last_line = line_no;
      start = nl + 1;

      if (auto c = raw.find('\\'); c != std::string_view::npos) raw = raw.substr(0, c);
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      std::size_t lead = 0;
      while (lead < raw.size() && std::isspace(static_cast<unsigned char>(raw[lead]))) ++lead;
      std::string_view line = raw.substr(lead);
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
      if (line.empty()) continue;

      if (section_ == Section::kEnd) fail(line_no, lead + 1, "content after 'end'");

      if (auto kw = match_keyword(line, line_no, lead)) {
        if (section_ == Section::kObjective) finish_objective(objective_tokens, objective_line);
        section_ = kw->section;
        if (section_ == Section::kObjective) {
          if (seen_objective_) fail(line_no, lead + 1, "duplicate objective section");
          seen_objective_ = true;
          model_.sense = *kw->sense;
          objective_tokens.clear();
          objective_line = line_no;
        }
        line = line.substr(kw->length);
        lead += kw->length;
        std::size_t more = 0;
        while (more < line.size() && std::isspace(static_cast<unsigned char>(line[more]))) ++more;
        line = line.substr(more);
        lead += more;
        if (line.empty()) continue;
        if (section_ == Section::kEnd) fail(line_no, lead + 1, "content after 'end'");
        if (section_ == Section::kConstraints || section_ == Section::kBounds) {
          fail(line_no, lead + 1, "section keyword must be on its own line");
        }
      }

      auto toks = tokenize(line, line_no, lead);
      switch (section_) {
        case Section::kNone:
          fail(line_no, lead + 1, "expected 'maximize' or 'minimize'");
        case Section::kObjective:
          objective_tokens.insert(objective_tokens.end(), toks.begin(), toks.end());
          break;
        case Section::kConstraints:
          parse_constraint(toks, line_no, lead + line.size() + 1);
          break;
        case Section::kBounds:
          parse_bound(toks, line_no, lead + line.size() + 1);
          break;
        case Section::kIntegers:
        case Section::kBinaries:
          parse_integers(toks, section_ == Section::kBinaries);
          break;
        case Section::kEnd:
          break;
      }
    }
    if (section_ == Section::kObjective) finish_objective(objective_tokens, objective_line);
    if (!seen_objective_) fail(last_line, 1, "missing objective section");

    for (std::size_t j = 0; j < model_.variables.size(); ++j) {
      const Variable& v = model_.variables[j];
      if (v.lower > v.upper) {
        const auto& [line, col] = bound_origin_.count(j) ? bound_origin_.at(j) : std::pair<std::size_t, std::size_t>{0, 0};
        fail(line, col, "lower bound exceeds upper bound for '" + v.name + "'");
      }
    }
    return std::move(model_);
  }

 private:
  void finish_objective(const std::vector<Token>& toks, std::size_t line) {
    if (toks.empty()) fail(line, 1, "empty objective");
    std::size_t begin = 0;
    if (toks.size() >= 2 && toks[0].kind == Tok::kIdent && toks[1].kind == Tok::kColon) begin = 2;
    if (begin == toks.size()) fail(toks.back(), "empty objective");
    ExprParser p(toks, begin, toks.size(), model_);
    const Token& last = toks.back();
    Affine a = p.parse(last.line, last.column + last.text.size());
    if (p.pos() != toks.size()) fail(toks[p.pos()], "comparator in objective");
    model_.objective = to_terms(a);
    model_.objective_offset = a.constant;
  }

  void parse_constraint(const std::vector<Token>& toks, std::size_t line, std::size_t eol_col) {
    std::size_t begin = 0;
    std::string name;
    if (toks.size() >= 2 && toks[0].kind == Tok::kIdent && toks[1].kind == Tok::kColon) {
      name = toks[0].text;
      begin = 2;
    }
    std::size_t cmp_pos = toks.size();
    for (std::size_t i = begin; i < toks.size(); ++i) {
      if (toks[i].kind == Tok::kCmp) {
        if (cmp_pos != toks.size()) fail(toks[i], "multiple comparators in constraint");
        cmp_pos = i;
      }
      if (toks[i].kind == Tok::kColon) fail(toks[i], "unexpected ':'");
    }
    if (cmp_pos == toks.size()) fail(line, eol_col, "constraint without comparator");
    if (cmp_pos == begin) fail(toks[cmp_pos], "missing left-hand side");
    if (cmp_pos + 1 == toks.size()) fail(line, eol_col, "missing right-hand side");

    ExprParser lhs_parser(toks, begin, cmp_pos, model_);
    Affine lhs = lhs_parser.parse(toks[cmp_pos].line, toks[cmp_pos].column);
    ExprParser rhs_parser(toks, cmp_pos + 1, toks.size(), model_);
    Affine rhs = rhs_parser.parse(line, eol_col);

    Affine diff = lhs;
    for (const auto& [var, c] : rhs.coef) diff.coef[var] -= c;
    Constraint con;
    con.name = std::move(name);
    con.terms = to_terms(diff);
    con.cmp = toks[cmp_pos].cmp;
    con.rhs = rhs.constant - lhs.constant;
    model_.constraints.push_back(std::move(con));
  }

  void set_bound(std::size_t var, Comparator cmp, double value, bool var_on_left, const Token& at) {
    Variable& v = model_.variables[var];
    bound_origin_[var] = {at.line, at.column};
    // Normalize to "var cmp value".
    if (!var_on_left) {
      if (cmp == Comparator::kLessEqual) {
        cmp = Comparator::kGreaterEqual;
      } else if (cmp == Comparator::kGreaterEqual) {
        cmp = Comparator::kLessEqual;
      }
    }
    switch (cmp) {
      case Comparator::kLessEqual:
        if (value == -kInf) fail(at, "upper bound of -inf for '" + v.name + "'");
        v.upper = value;
        break;
      case Comparator::kGreaterEqual:
        if (value == kInf) fail(at, "lower bound of +inf for '" + v.name + "'");
        v.lower = value;
        break;
      case Comparator::kEqual:
        if (std::isinf(value)) fail(at, "cannot fix '" + v.name + "' at infinity");
        v.lower = value;
        v.upper = value;
        break;
    }
  }

  void parse_bound(const std::vector<Token>& toks, std::size_t line, std::size_t eol_col) {
    if (toks.size() == 2 && toks[0].kind == Tok::kIdent && toks[1].kind == Tok::kIdent &&
        lower(toks[1].text) == "free") {
      const std::size_t var = model_.add_variable(toks[0].text);
      model_.variables[var].lower = -kInf;
      model_.variables[var].upper = kInf;
      bound_origin_[var] = {toks[0].line, toks[0].column};
      return;
    }
    std::size_t i = 0;
    if (auto left = bound_value(toks, i)) {
      // value cmp var [cmp value]
      if (i >= toks.size() || toks[i].kind != Tok::kCmp) fail(line, eol_col, "expected comparator in bound");
      const Token& c1 = toks[i++];
      if (i >= toks.size() || toks[i].kind != Tok::kIdent || infinity_literal(toks[i])) {
        fail(line, eol_col, "expected variable in bound");
      }
      const std::size_t var = model_.add_variable(toks[i].text);
      ++i;
      set_bound(var, c1.cmp, *left, false, c1);
      if (i == toks.size()) return;
      if (toks[i].kind != Tok::kCmp) fail(toks[i], "unexpected token in bound");
      const Token& c2 = toks[i++];
      auto right = bound_value(toks, i);
      if (!right) fail(line, eol_col, "expected value in bound");
      if (i != toks.size()) fail(toks[i], "unexpected token in bound");
      set_bound(var, c2.cmp, *right, true, c2);
      return;
    }
    if (toks.empty() || toks[0].kind != Tok::kIdent) fail(toks.empty() ? line : toks[0].line, toks.empty() ? 1 : toks[0].column, "malformed bound");
    const std::size_t var = model_.add_variable(toks[0].text);
    i = 1;
    if (i >= toks.size() || toks[i].kind != Tok::kCmp) fail(line, eol_col, "expected comparator in bound");
    const Token& c = toks[i++];
    auto right = bound_value(toks, i);
    if (!right) fail(line, eol_col, "expected value in bound");
    if (i != toks.size()) fail(toks[i], "unexpected token in bound");
    set_bound(var, c.cmp, *right, true, c);
  }

  void parse_integers(const std::vector<Token>& toks, bool binary) {
    for (const Token& t : toks) {
      if (t.kind != Tok::kIdent) fail(t, "expected variable name");
      const std::size_t var = model_.add_variable(t.text);
      model_.variables[var].integer = true;
      if (binary) {
        model_.variables[var].lower = std::max(model_.variables[var].lower, 0.0);
        model_.variables[var].upper = std::min(model_.variables[var].upper, 1.0);
        bound_origin_[var] = {t.line, t.column};
      }
    }
  }

  LinearModel model_;
  Section section_ = Section::kNone;
  bool seen_objective_ = false;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> bound_origin_;
};

}  // namespace

ModelParseResult parse_model(std::string_view text) {
  try {
    ModelBuilder builder;
    return builder.build(text);
  } catch (Fail& f) {
    return std::move(f.error);
  }
}

}  // namespace evloop::refsolver
