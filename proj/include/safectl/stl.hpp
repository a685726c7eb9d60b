#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"
#include "safectl/systems.hpp"

namespace safectl {

struct SignalExpr {
  enum class Kind { component, constant, negate, abs, add, subtract, scale };

  Kind kind = Kind::constant;
  int index = 0;
  double value = 0.0;
  std::shared_ptr<const SignalExpr> lhs;
  std::shared_ptr<const SignalExpr> rhs;
};

struct TimeBounds {
  double a = 0.0;
  double b = 0.0;
};

struct StlFormula {
  enum class Kind { less, greater, negation, conjunction, disjunction, implication, eventually, globally };

  Kind kind = Kind::less;
  SignalExpr expr;
  double threshold = 0.0;
  std::shared_ptr<const StlFormula> lhs;
  std::shared_ptr<const StlFormula> rhs;
  std::optional<TimeBounds> bounds;
};

bool operator==(const SignalExpr& a, const SignalExpr& b);
bool operator==(const StlFormula& a, const StlFormula& b);

inline bool operator==(const SignalExpr& a, const SignalExpr& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case SignalExpr::Kind::component:
      return a.index == b.index;
    case SignalExpr::Kind::constant:
      return a.value == b.value;
    case SignalExpr::Kind::negate:
    case SignalExpr::Kind::abs:
      return *a.lhs == *b.lhs;
    case SignalExpr::Kind::scale:
      return a.value == b.value && *a.lhs == *b.lhs;
    case SignalExpr::Kind::add:
    case SignalExpr::Kind::subtract:
      return *a.lhs == *b.lhs && *a.rhs == *b.rhs;
  }
  return false;
}

inline bool operator==(const StlFormula& a, const StlFormula& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case StlFormula::Kind::less:
    case StlFormula::Kind::greater:
      return a.threshold == b.threshold && a.expr == b.expr;
    case StlFormula::Kind::negation:
      return *a.lhs == *b.lhs;
    case StlFormula::Kind::conjunction:
    case StlFormula::Kind::disjunction:
    case StlFormula::Kind::implication:
      return *a.lhs == *b.lhs && *a.rhs == *b.rhs;
    case StlFormula::Kind::eventually:
    case StlFormula::Kind::globally:
      if (a.bounds.has_value() != b.bounds.has_value()) return false;
      if (a.bounds && (a.bounds->a != b.bounds->a || a.bounds->b != b.bounds->b)) return false;
      return *a.lhs == *b.lhs;
  }
  return false;
}

namespace stl {

inline SignalExpr signal(int index = 0) {
  safectl::detail::require(index >= 0, "stl: signal component index must be non-negative");
  SignalExpr e;
  e.kind = SignalExpr::Kind::component;
  e.index = index;
  return e;
}

inline SignalExpr constant(double value) {
  safectl::detail::require(std::isfinite(value), "stl: constants must be finite");
  SignalExpr e;
  e.value = value;
  return e;
}

namespace detail {
inline SignalExpr unary(SignalExpr::Kind kind, SignalExpr operand, double value = 0.0) {
  SignalExpr e;
  e.kind = kind;
  e.value = value;
  e.lhs = std::make_shared<const SignalExpr>(std::move(operand));
  return e;
}
inline SignalExpr binary(SignalExpr::Kind kind, SignalExpr a, SignalExpr b) {
  SignalExpr e;
  e.kind = kind;
  e.lhs = std::make_shared<const SignalExpr>(std::move(a));
  e.rhs = std::make_shared<const SignalExpr>(std::move(b));
  return e;
}
}  // namespace detail

inline SignalExpr negate(SignalExpr e) { return detail::unary(SignalExpr::Kind::negate, std::move(e)); }
inline SignalExpr abs(SignalExpr e) { return detail::unary(SignalExpr::Kind::abs, std::move(e)); }
inline SignalExpr scale(double factor, SignalExpr e) {
  safectl::detail::require(std::isfinite(factor), "stl: scale factor must be finite");
  return detail::unary(SignalExpr::Kind::scale, std::move(e), factor);
}
inline SignalExpr add(SignalExpr a, SignalExpr b) {
  return detail::binary(SignalExpr::Kind::add, std::move(a), std::move(b));
}
inline SignalExpr subtract(SignalExpr a, SignalExpr b) {
  return detail::binary(SignalExpr::Kind::subtract, std::move(a), std::move(b));
}

inline StlFormula less(SignalExpr e, double c) {
  safectl::detail::require(std::isfinite(c), "stl: atom threshold must be finite");
  StlFormula f;
  f.kind = StlFormula::Kind::less;
  f.expr = std::move(e);
  f.threshold = c;
  return f;
}

inline StlFormula greater(SignalExpr e, double c) {
  StlFormula f = less(std::move(e), c);
  f.kind = StlFormula::Kind::greater;
  return f;
}

inline StlFormula negation(StlFormula a) {
  StlFormula f;
  f.kind = StlFormula::Kind::negation;
  f.lhs = std::make_shared<const StlFormula>(std::move(a));
  return f;
}

namespace detail {
inline StlFormula binary(StlFormula::Kind kind, StlFormula a, StlFormula b) {
  StlFormula f;
  f.kind = kind;
  f.lhs = std::make_shared<const StlFormula>(std::move(a));
  f.rhs = std::make_shared<const StlFormula>(std::move(b));
  return f;
}
inline StlFormula temporal(StlFormula::Kind kind, StlFormula a, std::optional<TimeBounds> bounds) {
  if (bounds) {
    safectl::detail::require(std::isfinite(bounds->a) && std::isfinite(bounds->b),
                             "stl: time bounds must be finite");
    safectl::detail::require(0.0 <= bounds->a && bounds->a <= bounds->b, "stl: time bounds need 0 <= a <= b");
  }
  StlFormula f;
  f.kind = kind;
  f.lhs = std::make_shared<const StlFormula>(std::move(a));
  f.bounds = bounds;
  return f;
}
}  // namespace detail

inline StlFormula conjunction(StlFormula a, StlFormula b) {
  return detail::binary(StlFormula::Kind::conjunction, std::move(a), std::move(b));
}
inline StlFormula disjunction(StlFormula a, StlFormula b) {
  return detail::binary(StlFormula::Kind::disjunction, std::move(a), std::move(b));
}
inline StlFormula implies(StlFormula a, StlFormula b) {
  return detail::binary(StlFormula::Kind::implication, std::move(a), std::move(b));
}
inline StlFormula eventually(StlFormula a, std::optional<TimeBounds> bounds = std::nullopt) {
  return detail::temporal(StlFormula::Kind::eventually, std::move(a), bounds);
}
inline StlFormula globally(StlFormula a, std::optional<TimeBounds> bounds = std::nullopt) {
  return detail::temporal(StlFormula::Kind::globally, std::move(a), bounds);
}

}  // namespace stl

// ---------------------------------------------------------------------------
// Signal expressions

inline double evaluate(const SignalExpr& e, const State& x) {
  using K = SignalExpr::Kind;
  switch (e.kind) {
    case K::component:
      detail::require(e.index < x.size(), "stl: signal component x[" + std::to_string(e.index) +
                                              "] out of range for state of dimension " +
                                              std::to_string(x.size()));
      return x[e.index];
    case K::constant:
      return e.value;
    case K::negate:
      return -evaluate(*e.lhs, x);
    case K::abs:
      return std::abs(evaluate(*e.lhs, x));
    case K::scale:
      return e.value * evaluate(*e.lhs, x);
    case K::add:
      return evaluate(*e.lhs, x) + evaluate(*e.rhs, x);
    case K::subtract:
      return evaluate(*e.lhs, x) - evaluate(*e.rhs, x);
  }
  return 0.0;
}

// Adds weight * d e / d x into grad. abs uses sign(0) = 0.
inline void accumulate_gradient(const SignalExpr& e, const State& x, double weight, Eigen::Ref<Eigen::VectorXd> grad) {
  using K = SignalExpr::Kind;
  switch (e.kind) {
    case K::component:
      grad[e.index] += weight;
      return;
    case K::constant:
      return;
    case K::negate:
      accumulate_gradient(*e.lhs, x, -weight, grad);
      return;
    case K::abs: {
      const double inner = evaluate(*e.lhs, x);
      const double sign = inner > 0.0 ? 1.0 : (inner < 0.0 ? -1.0 : 0.0);
      if (sign != 0.0) accumulate_gradient(*e.lhs, x, weight * sign, grad);
      return;
    }
    case K::scale:
      accumulate_gradient(*e.lhs, x, weight * e.value, grad);
      return;
    case K::add:
      accumulate_gradient(*e.lhs, x, weight, grad);
      accumulate_gradient(*e.rhs, x, weight, grad);
      return;
    case K::subtract:
      accumulate_gradient(*e.lhs, x, weight, grad);
      accumulate_gradient(*e.rhs, x, -weight, grad);
      return;
  }
}

inline int max_component(const SignalExpr& e) {
  switch (e.kind) {
    case SignalExpr::Kind::component:
      return e.index;
    case SignalExpr::Kind::constant:
      return -1;
    default:
      return std::max(max_component(*e.lhs), e.rhs ? max_component(*e.rhs) : -1);
  }
}

inline int max_component(const StlFormula& f) {
  if (f.kind == StlFormula::Kind::less || f.kind == StlFormula::Kind::greater) return max_component(f.expr);
  return std::max(max_component(*f.lhs), f.rhs ? max_component(*f.rhs) : -1);
}

// ---------------------------------------------------------------------------
// Pretty printing. The output parses back to an identical tree.

namespace detail {

inline bool is_sum(const SignalExpr& e) {
  return e.kind == SignalExpr::Kind::add || e.kind == SignalExpr::Kind::subtract;
}

inline std::string format_number(double v) {
  std::string s = csv::format(v);
  return s;
}

inline std::string print_expr(const SignalExpr& e) {
  using K = SignalExpr::Kind;
  switch (e.kind) {
    case K::component:
      return e.index == 0 ? "x" : "x[" + std::to_string(e.index) + "]";
    case K::constant:
      return format_number(e.value);
    case K::negate:
      return "-(" + print_expr(*e.lhs) + ")";
    case K::abs:
      return "abs(" + print_expr(*e.lhs) + ")";
    case K::scale: {
      const std::string operand = print_expr(*e.lhs);
      return format_number(e.value) + " * " + (is_sum(*e.lhs) ? "(" + operand + ")" : operand);
    }
    case K::add:
    case K::subtract: {
      const std::string rhs = print_expr(*e.rhs);
      return print_expr(*e.lhs) + (e.kind == K::add ? " + " : " - ") + (is_sum(*e.rhs) ? "(" + rhs + ")" : rhs);
    }
  }
  return {};
}

}  // namespace detail

inline std::string to_string(const SignalExpr& e) { return detail::print_expr(e); }

inline std::string to_string(const StlFormula& f) {
  using K = StlFormula::Kind;
  switch (f.kind) {
    case K::less:
      return to_string(f.expr) + " < " + detail::format_number(f.threshold);
    case K::greater:
      return to_string(f.expr) + " > " + detail::format_number(f.threshold);
    case K::negation:
      return "!(" + to_string(*f.lhs) + ")";
    case K::conjunction:
      return "(" + to_string(*f.lhs) + " & " + to_string(*f.rhs) + ")";
    case K::disjunction:
      return "(" + to_string(*f.lhs) + " | " + to_string(*f.rhs) + ")";
    case K::implication:
      return "(" + to_string(*f.lhs) + " -> " + to_string(*f.rhs) + ")";
    case K::eventually:
    case K::globally: {
      std::string head = f.kind == K::eventually ? "F" : "G";
      if (f.bounds)
        head += "[" + detail::format_number(f.bounds->a) + "," + detail::format_number(f.bounds->b) + "]";
      return head + "(" + to_string(*f.lhs) + ")";
    }
  }
  return {};
}

inline std::ostream& operator<<(std::ostream& os, const StlFormula& f) { return os << to_string(f); }

// ---------------------------------------------------------------------------
// Parser

namespace detail {

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : text_(text) {}

  StlFormula parse() {
    StlFormula f = parse_implies();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return f;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError("stl: " + what, pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  char peek_after(std::size_t offset) const {
    return pos_ + offset < text_.size() ? text_[pos_ + offset] : '\0';
  }

  bool match(std::string_view token) {
    skip_ws();
    if (text_.substr(pos_, token.size()) != token) return false;
    pos_ += token.size();
    return true;
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  bool at_number() {
    const char c = peek();
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return true;
    if (c == '-' || c == '+') {
      const char d = peek_after(1);
      return std::isdigit(static_cast<unsigned char>(d)) || d == '.';
    }
    return false;
  }

  double parse_number() {
    skip_ws();
    const std::size_t start = pos_;
    std::size_t i = pos_;
    auto digits = [&] {
      const std::size_t from = i;
      while (i < text_.size() && std::isdigit(static_cast<unsigned char>(text_[i]))) ++i;
      return i - from;
    };
    if (i < text_.size() && (text_[i] == '-' || text_[i] == '+')) ++i;
    std::size_t count = digits();
    if (i < text_.size() && text_[i] == '.') {
      ++i;
      count += digits();
    }
    if (count == 0) fail("expected number");
    if (i < text_.size() && (text_[i] == 'e' || text_[i] == 'E')) {
      std::size_t j = i + 1;
      if (j < text_.size() && (text_[j] == '-' || text_[j] == '+')) ++j;
      const std::size_t before = j;
      while (j < text_.size() && std::isdigit(static_cast<unsigned char>(text_[j]))) ++j;
      if (j > before) i = j;
    }
    std::size_t begin = start;
    if (text_[begin] == '+') ++begin;
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text_.data() + begin, text_.data() + i, value);
    if (ec != std::errc() || end != text_.data() + i || !std::isfinite(value)) fail("malformed number");
    pos_ = i;
    return value;
  }

  StlFormula parse_implies() {
    StlFormula lhs = parse_or();
    if (match("->")) return stl::implies(std::move(lhs), parse_implies());
    return lhs;
  }

  StlFormula parse_or() {
    StlFormula lhs = parse_and();
    while (match("|")) lhs = stl::disjunction(std::move(lhs), parse_and());
    return lhs;
  }

  StlFormula parse_and() {
    StlFormula lhs = parse_unary();
    while (match("&")) lhs = stl::conjunction(std::move(lhs), parse_unary());
    return lhs;
  }

  StlFormula parse_unary() {
    const char c = peek();
    if (c == '!') {
      ++pos_;
      return stl::negation(parse_unary());
    }
    if ((c == 'F' || c == 'G') && !ident_char(peek_after(1))) {
      ++pos_;
      std::optional<TimeBounds> bounds;
      if (match("[")) {
        const std::size_t at = pos_;
        const double a = parse_number();
        expect(',');
        const double b = parse_number();
        expect(']');
        if (!(0.0 <= a && a <= b)) throw ParseError("stl: time bounds need 0 <= a <= b", at);
        bounds = TimeBounds{a, b};
      }
      StlFormula operand = parse_unary();
      return c == 'F' ? stl::eventually(std::move(operand), bounds) : stl::globally(std::move(operand), bounds);
    }
    if (c == '(') {
      const std::size_t start = pos_;
      std::optional<ParseError> as_formula;
      try {
        ++pos_;
        StlFormula inner = parse_implies();
        expect(')');
        return inner;
      } catch (const ParseError& e) {
        as_formula = e;
      }
      pos_ = start;
      try {
        return parse_atom();
      } catch (const ParseError& e) {
        throw e.position() >= as_formula->position() ? e : *as_formula;
      }
    }
    return parse_atom();
  }

  StlFormula parse_atom() {
    SignalExpr e = parse_expr();
    const char c = peek();
    if (c == '<') {
      ++pos_;
      return stl::less(std::move(e), parse_number());
    }
    if (c == '>') {
      ++pos_;
      return stl::greater(std::move(e), parse_number());
    }
    fail("expected '<' or '>'");
  }

  SignalExpr parse_expr() {
    SignalExpr lhs = parse_term();
    while (true) {
      const char c = peek();
      if (c == '+') {
        ++pos_;
        lhs = stl::add(std::move(lhs), parse_term());
      } else if (c == '-' && peek_after(1) != '>') {
        ++pos_;
        lhs = stl::subtract(std::move(lhs), parse_term());
      } else {
        return lhs;
      }
    }
  }

  SignalExpr parse_term() {
    if (at_number()) {
      const double v = parse_number();
      if (peek() == '*') {
        ++pos_;
        return stl::scale(v, parse_term());
      }
      return stl::constant(v);
    }
    const char c = peek();
    if (c == '-') {
      ++pos_;
      return stl::negate(parse_term());
    }
    if (c == '(') {
      ++pos_;
      SignalExpr inner = parse_expr();
      expect(')');
      return inner;
    }
    if (match("abs")) {
      expect('(');
      SignalExpr inner = parse_expr();
      expect(')');
      return stl::abs(std::move(inner));
    }
    if (c == 'x' && !ident_char(peek_after(1))) {
      ++pos_;
      if (peek() == '[') {
        ++pos_;
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (pos_ == start) fail("expected component index");
        const int index = std::stoi(std::string(text_.substr(start, pos_ - start)));
        expect(']');
        return stl::signal(index);
      }
      return stl::signal(0);
    }
    if (c == '\0') fail("unexpected end of formula");
    fail("unexpected '" + std::string(1, c) + "'");
  }
};

}  // namespace detail

inline StlFormula parse_formula(std::string_view text) { return detail::FormulaParser(text).parse(); }

// ---------------------------------------------------------------------------
// Quantitative semantics

struct Evaluation {
  double robustness = 0.0;
  // Some bounded window ran past the end of the trace and was truncated.
  bool clipped = false;
};

namespace detail {

// Snap ratios within rounding noise of an integer, so that 1/0.1 counts as 10 samples.
inline double sample_ratio(double t, double h) {
  const double r = t / h;
  const double nearest = std::round(r);
  return std::abs(r - nearest) <= 1e-9 * std::max(1.0, std::abs(r)) ? nearest : r;
}

struct WindowOffsets {
  std::size_t lo = 0;
  std::optional<std::size_t> hi;  // nullopt: the remaining suffix
};

inline WindowOffsets window_offsets(const StlFormula& f, double h) {
  if (!f.bounds) return {};
  return {static_cast<std::size_t>(std::floor(sample_ratio(f.bounds->a, h))),
          static_cast<std::size_t>(std::ceil(sample_ratio(f.bounds->b, h)))};
}

inline bool is_temporal(const StlFormula& f) {
  return f.kind == StlFormula::Kind::eventually || f.kind == StlFormula::Kind::globally;
}

struct Segment {
  std::size_t start = 0;
  std::vector<double> values;
  double at(std::size_t i) const { return values[i - start]; }
};

class ExactEvaluator {
 public:
  explicit ExactEvaluator(const Trace& trace) : trace_(trace), n_(trace.size()) {}

  bool clipped = false;

  // Robustness of f at every index in [s, e].
  Segment run(const StlFormula& f, std::size_t s, std::size_t e) {
    using K = StlFormula::Kind;
    Segment out{s, std::vector<double>(e - s + 1)};
    switch (f.kind) {
      case K::less:
      case K::greater:
        for (std::size_t i = s; i <= e; ++i) {
          const double v = evaluate(f.expr, trace_[i].state);
          out.values[i - s] = f.kind == K::less ? f.threshold - v : v - f.threshold;
        }
        return out;
      case K::negation: {
        Segment a = run(*f.lhs, s, e);
        for (auto& v : a.values) v = -v;
        return a;
      }
      case K::conjunction:
      case K::disjunction:
      case K::implication: {
        const Segment a = run(*f.lhs, s, e);
        const Segment b = run(*f.rhs, s, e);
        for (std::size_t k = 0; k < out.values.size(); ++k) {
          const double x = a.values[k], y = b.values[k];
          out.values[k] = f.kind == K::conjunction ? std::min(x, y)
                          : f.kind == K::disjunction ? std::max(x, y)
                                                     : std::max(-x, y);
        }
        return out;
      }
      case K::eventually:
      case K::globally:
        return temporal(f, s, e, std::move(out));
    }
    return out;
  }

 private:
  const Trace& trace_;
  std::size_t n_;

  Segment temporal(const StlFormula& f, std::size_t s, std::size_t e, Segment out) {
    const bool is_max = f.kind == StlFormula::Kind::eventually;
    const WindowOffsets w = window_offsets(f, trace_.sample_period());
    const std::size_t last = n_ - 1;
    if (e + w.lo > last)
      throw DomainError("stl: empty evaluation window for " + to_string(f) + " at sample " + std::to_string(e));
    const std::size_t child_end = w.hi ? std::min(e + *w.hi, last) : last;
    if (w.hi && e + *w.hi > last) clipped = true;
    const Segment child = run(*f.lhs, s + w.lo, child_end);
    auto better = [is_max](double a, double b) { return is_max ? a >= b : a <= b; };
    std::deque<std::size_t> window;
    std::size_t next = s + w.lo;
    for (std::size_t i = s; i <= e; ++i) {
      const std::size_t lo = i + w.lo;
      const std::size_t hi = w.hi ? std::min(i + *w.hi, last) : last;
      for (; next <= hi; ++next) {
        while (!window.empty() && better(child.at(next), child.at(window.back()))) window.pop_back();
        window.push_back(next);
      }
      while (window.front() < lo) window.pop_front();
      out.values[i - s] = child.at(window.front());
    }
    return out;
  }
};

}  // namespace detail

inline Evaluation evaluate(const StlFormula& f, const Trace& trace, std::size_t t_index = 0) {
  detail::require(t_index < trace.size(), "stl: t_index outside the trace");
  detail::require(max_component(f) < trace.state_dim(), "stl: formula references a missing signal component");
  detail::ExactEvaluator ev(trace);
  const double rho = ev.run(f, t_index, t_index).values.front();
  return {rho, ev.clipped};
}

inline double robustness(const StlFormula& f, const Trace& trace, std::size_t t_index = 0) {
  return evaluate(f, trace, t_index).robustness;
}

// Zero robustness counts as a violation.
inline bool satisfies(const StlFormula& f, const Trace& trace, std::size_t t_index = 0) {
  return robustness(f, trace, t_index) > 0.0;
}

// ---------------------------------------------------------------------------
// Smoothed robustness

struct SmoothRobustness {
  double value = 0.0;
  Eigen::MatrixXd gradient;  // trace samples x state components
};

namespace detail {

struct SmoothNode {
  Segment values;
  std::vector<SmoothNode> children;
};

class SmoothEvaluator {
 public:
  SmoothEvaluator(const Trace& trace, double beta) : trace_(trace), n_(trace.size()), beta_(beta) {}

  SmoothNode forward(const StlFormula& f, std::size_t s, std::size_t e) const {
    using K = StlFormula::Kind;
    SmoothNode node;
    node.values = Segment{s, std::vector<double>(e - s + 1)};
    auto& out = node.values.values;
    switch (f.kind) {
      case K::less:
      case K::greater:
        for (std::size_t i = s; i <= e; ++i) {
          const double v = evaluate(f.expr, trace_[i].state);
          out[i - s] = f.kind == K::less ? f.threshold - v : v - f.threshold;
        }
        break;
      case K::negation:
        node.children.push_back(forward(*f.lhs, s, e));
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = -node.children[0].values.values[k];
        break;
      case K::conjunction:
      case K::disjunction:
      case K::implication: {
        node.children.push_back(forward(*f.lhs, s, e));
        node.children.push_back(forward(*f.rhs, s, e));
        const auto& a = node.children[0].values.values;
        const auto& b = node.children[1].values.values;
        for (std::size_t k = 0; k < out.size(); ++k) {
          const double x = f.kind == K::implication ? -a[k] : a[k];
          const double pair[2] = {x, b[k]};
          out[k] = soft(pair, 2, f.kind != K::conjunction);
        }
        break;
      }
      case K::eventually:
      case K::globally: {
        const auto [lo, hi] = child_range(f, s, e);
        node.children.push_back(forward(*f.lhs, lo, hi));
        const Segment& child = node.children[0].values;
        for (std::size_t i = s; i <= e; ++i) {
          const auto [a, b] = window(f, i);
          out[i - s] = soft(&child.values[a - child.start], b - a + 1, f.kind == K::eventually);
        }
        break;
      }
    }
    return node;
  }

  void backward(const StlFormula& f, const SmoothNode& node, const std::vector<double>& adjoint,
                Eigen::MatrixXd& grad) const {
    using K = StlFormula::Kind;
    const std::size_t s = node.values.start;
    switch (f.kind) {
      case K::less:
      case K::greater: {
        const double sign = f.kind == K::less ? -1.0 : 1.0;
        for (std::size_t k = 0; k < adjoint.size(); ++k) {
          if (adjoint[k] == 0.0) continue;
          const State& x = trace_[s + k].state;
          Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
          accumulate_gradient(f.expr, x, sign * adjoint[k], g);
          grad.row(static_cast<Eigen::Index>(s + k)) += g.transpose();
        }
        return;
      }
      case K::negation: {
        std::vector<double> a(adjoint.size());
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = -adjoint[k];
        backward(*f.lhs, node.children[0], a, grad);
        return;
      }
      case K::conjunction:
      case K::disjunction:
      case K::implication: {
        const auto& va = node.children[0].values.values;
        const auto& vb = node.children[1].values.values;
        std::vector<double> ga(adjoint.size()), gb(adjoint.size());
        for (std::size_t k = 0; k < adjoint.size(); ++k) {
          const double sign_a = f.kind == K::implication ? -1.0 : 1.0;
          const double pair[2] = {sign_a * va[k], vb[k]};
          double w[2];
          soft_weights(pair, 2, f.kind != K::conjunction, node.values.values[k], w);
          ga[k] = adjoint[k] * w[0] * sign_a;
          gb[k] = adjoint[k] * w[1];
        }
        backward(*f.lhs, node.children[0], ga, grad);
        backward(*f.rhs, node.children[1], gb, grad);
        return;
      }
      case K::eventually:
      case K::globally: {
        const Segment& child = node.children[0].values;
        std::vector<double> g(child.values.size(), 0.0);
        std::vector<double> w;
        for (std::size_t k = 0; k < adjoint.size(); ++k) {
          if (adjoint[k] == 0.0) continue;
          const auto [a, b] = window(f, s + k);
          w.resize(b - a + 1);
          soft_weights(&child.values[a - child.start], w.size(), f.kind == K::eventually, node.values.values[k],
                       w.data());
          for (std::size_t j = 0; j < w.size(); ++j) g[a - child.start + j] += adjoint[k] * w[j];
        }
        backward(*f.lhs, node.children[0], g, grad);
        return;
      }
    }
  }

 private:
  const Trace& trace_;
  std::size_t n_;
  double beta_;

  std::pair<std::size_t, std::size_t> window(const StlFormula& f, std::size_t i) const {
    const WindowOffsets w = window_offsets(f, trace_.sample_period());
    return {i + w.lo, w.hi ? std::min(i + *w.hi, n_ - 1) : n_ - 1};
  }

  std::pair<std::size_t, std::size_t> child_range(const StlFormula& f, std::size_t s, std::size_t e) const {
    const WindowOffsets w = window_offsets(f, trace_.sample_period());
    if (e + w.lo > n_ - 1)
      throw DomainError("stl: empty evaluation window for " + to_string(f) + " at sample " + std::to_string(e));
    return {s + w.lo, w.hi ? std::min(e + *w.hi, n_ - 1) : n_ - 1};
  }

  // (1/beta) logsumexp(beta v) for max, its mirror for min.
  double soft(const double* v, std::size_t count, bool is_max) const {
    const double sign = is_max ? 1.0 : -1.0;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < count; ++j) m = std::max(m, sign * v[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < count; ++j) sum += std::exp(beta_ * (sign * v[j] - m));
    return sign * (m + std::log(sum) / beta_);
  }

  void soft_weights(const double* v, std::size_t count, bool is_max, double value, double* w) const {
    const double sign = is_max ? 1.0 : -1.0;
    for (std::size_t j = 0; j < count; ++j) w[j] = std::exp(beta_ * sign * (v[j] - value));
  }
};

inline int smoothing_depth(const StlFormula& f) {
  using K = StlFormula::Kind;
  switch (f.kind) {
    case K::less:
    case K::greater:
      return 0;
    case K::negation:
      return smoothing_depth(*f.lhs);
    case K::eventually:
    case K::globally:
      return 1 + smoothing_depth(*f.lhs);
    default:
      return 1 + std::max(smoothing_depth(*f.lhs), smoothing_depth(*f.rhs));
  }
}

inline std::size_t widest_window(const StlFormula& f, std::size_t n, double h) {
  using K = StlFormula::Kind;
  switch (f.kind) {
    case K::less:
    case K::greater:
      return 1;
    case K::negation:
      return widest_window(*f.lhs, n, h);
    case K::eventually:
    case K::globally: {
      const WindowOffsets w = window_offsets(f, h);
      const std::size_t own = w.hi ? std::min(*w.hi - w.lo + 1, n) : n;
      return std::max(own, widest_window(*f.lhs, n, h));
    }
    default:
      return std::max({std::size_t{2}, widest_window(*f.lhs, n, h), widest_window(*f.rhs, n, h)});
  }
}

inline void check_smoothing_args(const StlFormula& f, const Trace& trace, std::size_t t_index, double beta) {
  require(beta > 0.0 && std::isfinite(beta), "stl: smoothing parameter beta must be positive");
  require(t_index < trace.size(), "stl: t_index outside the trace");
  require(max_component(f) < trace.state_dim(), "stl: formula references a missing signal component");
}

}  // namespace detail

inline double smooth_robustness(const StlFormula& f, const Trace& trace, std::size_t t_index, double beta) {
  detail::check_smoothing_args(f, trace, t_index, beta);
  return detail::SmoothEvaluator(trace, beta).forward(f, t_index, t_index).values.values.front();
}

inline SmoothRobustness smooth_robustness_gradient(const StlFormula& f, const Trace& trace, std::size_t t_index,
                                                   double beta) {
  detail::check_smoothing_args(f, trace, t_index, beta);
  const detail::SmoothEvaluator ev(trace, beta);
  const detail::SmoothNode root = ev.forward(f, t_index, t_index);
  SmoothRobustness out;
  out.value = root.values.values.front();
  out.gradient = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(trace.size()), trace.state_dim());
  ev.backward(f, root, {1.0}, out.gradient);
  return out;
}

// Worst-case gap between smoothed and exact robustness: D ln(W) / beta.
inline double smoothing_error_bound(const StlFormula& f, const Trace& trace, double beta) {
  detail::require(beta > 0.0, "stl: smoothing parameter beta must be positive");
  const int depth = detail::smoothing_depth(f);
  const std::size_t width = detail::widest_window(f, trace.size(), trace.sample_period());
  return depth * std::log(static_cast<double>(width)) / beta;
}

// ---------------------------------------------------------------------------
// Oven specifications and monitor reports

inline StlFormula oven_converge_formula(double desired = 200.0, double band = 10.0) {
  return stl::eventually(stl::globally(stl::less(stl::abs(stl::subtract(stl::signal(), stl::constant(desired))), band)));
}

inline StlFormula oven_avoid_formula(double limit = 400.0, double recover_within = 1.0, double stay_for = 10.0) {
  return stl::globally(stl::implies(
      stl::greater(stl::signal(), limit),
      stl::eventually(stl::globally(stl::less(stl::signal(), limit), TimeBounds{0.0, stay_for}),
                      TimeBounds{0.0, recover_within})));
}

struct MonitorEntry {
  std::string name;
  StlFormula formula;
  double robustness = 0.0;
  bool satisfied = false;
  bool clipped = false;
};

inline MonitorEntry monitor(std::string name, const StlFormula& f, const Trace& trace, std::size_t t_index = 0) {
  const Evaluation ev = evaluate(f, trace, t_index);
  return {std::move(name), f, ev.robustness, ev.robustness > 0.0, ev.clipped};
}

struct OvenSpecReport {
  MonitorEntry converge;
  MonitorEntry avoid;
  MonitorEntry combined;

  std::vector<MonitorEntry> entries() const { return {converge, avoid, combined}; }
  bool all_satisfied() const { return converge.satisfied && avoid.satisfied && combined.satisfied; }
};

inline OvenSpecReport check_oven_specs(const Trace& trace, const OvenParams& p = {}) {
  const StlFormula converge = oven_converge_formula(p.temp_desired);
  const StlFormula avoid = oven_avoid_formula();
  return {monitor("phi_converge", converge, trace), monitor("phi_avoid", avoid, trace),
          monitor("phi", stl::conjunction(converge, avoid), trace)};
}

namespace detail {
inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace detail

// Formulas contain commas inside time bounds, so that column is quoted.
inline void write_monitor_report(std::ostream& os, const std::vector<MonitorEntry>& entries) {
  os << "formula,robustness,satisfied,clipped\n";
  for (const auto& e : entries)
    os << detail::csv_quote(to_string(e.formula)) << ',' << csv::format(e.robustness) << ','
       << (e.satisfied ? "true" : "false") << ',' << (e.clipped ? "true" : "false") << '\n';
}

}  // namespace safectl
