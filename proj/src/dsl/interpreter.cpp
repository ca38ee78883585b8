#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "amd/distributions.hpp"
#include "amd/dsl.hpp"

namespace amd::dsl {

namespace {

using EK = EvalError::Kind;

[[noreturn]] void domain(const std::string& msg) { throw EvalError(EK::Domain, msg); }
[[noreturn]] void shape(const std::string& msg) { throw EvalError(EK::Shape, msg); }

double checked(double x, const char* what) {
  if (!std::isfinite(x)) domain(std::string("non-finite result in ") + what);
  return x;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add: return checked(a + b, "+");
    case BinaryOp::Sub: return checked(a - b, "-");
    case BinaryOp::Mul: return checked(a * b, "*");
    case BinaryOp::Div:
      if (b == 0.0) domain("division by zero");
      return checked(a / b, "/");
    case BinaryOp::Pow:
      if (a < 0.0 && b != std::floor(b)) domain("fractional power of a negative number");
      if (a == 0.0 && b < 0.0) domain("zero raised to a negative power");
      return checked(std::pow(a, b), "**");
  }
  return 0.0;
}

class Interpreter {
 public:
  Interpreter(std::size_t budget, const dist::MarginalDistribution* d, std::size_t slots)
      : budget_(budget), dist_(d), slots_(slots) {}

  std::vector<Value>& slots() { return slots_; }

  Value eval(const Expr& e) {
    if (++steps_ > budget_) {
      throw EvalError(EK::Budget, "step budget of " + std::to_string(budget_) + " exceeded");
    }
    switch (e.kind) {
      case ExprKind::Number: return e.value;
      case ExprKind::Var: return slots_[static_cast<std::size_t>(e.slot)];
      case ExprKind::VecLit: {
        std::vector<double> out;
        out.reserve(e.kids.size());
        for (const auto& k : e.kids) out.push_back(scalar(eval(*k), "vector element"));
        return out;
      }
      case ExprKind::Index: {
        Value base = eval(*e.kids[0]);
        const double idx = scalar(eval(*e.kids[1]), "index");
        if (base.is_scalar()) shape("cannot index a number");
        const auto& v = base.vec();
        if (idx != std::floor(idx)) shape("index must be an integer");
        double pos = idx < 0 ? idx + static_cast<double>(v.size()) : idx;
        if (pos < 0 || pos >= static_cast<double>(v.size())) {
          shape("index " + std::to_string(static_cast<long long>(idx)) + " out of range for length " +
                std::to_string(v.size()));
        }
        return v[static_cast<std::size_t>(pos)];
      }
      case ExprKind::Binary: return binary(e.bop, eval(*e.kids[0]), eval(*e.kids[1]));
      case ExprKind::Neg: {
        Value x = eval(*e.kids[0]);
        if (x.is_scalar()) return -x.scalar();
        for (double& d : x.vec()) d = -d;
        return x;
      }
      case ExprKind::Compare: return test(e) ? 1.0 : 0.0;
      case ExprKind::Cond: return test(*e.kids[0]) ? eval(*e.kids[1]) : eval(*e.kids[2]);
      case ExprKind::Call: return call(e);
      case ExprKind::Let: {
        const std::size_t n = e.binders.size();
        for (std::size_t i = 0; i < n; ++i) {
          slots_[static_cast<std::size_t>(e.binder_slots[i])] = eval(*e.kids[i]);
        }
        return eval(*e.kids[n]);
      }
    }
    return 0.0;
  }

 private:
  static double scalar(const Value& v, const char* what) {
    if (!v.is_scalar()) shape(std::string(what) + " must be a number, got a vector");
    return v.scalar();
  }

  bool test(const Expr& c) {
    if (++steps_ > budget_) {
      throw EvalError(EK::Budget, "step budget of " + std::to_string(budget_) + " exceeded");
    }
    const double a = scalar(eval(*c.kids[0]), "comparison operand");
    const double b = scalar(eval(*c.kids[1]), "comparison operand");
    switch (c.cop) {
      case CompareOp::Lt: return a < b;
      case CompareOp::Le: return a <= b;
      case CompareOp::Gt: return a > b;
      case CompareOp::Ge: return a >= b;
      case CompareOp::Eq: return a == b;
      case CompareOp::Ne: return a != b;
    }
    return false;
  }

  static Value binary(BinaryOp op, Value a, Value b) {
    if (a.is_scalar() && b.is_scalar()) return apply_binary(op, a.scalar(), b.scalar());
    if (a.is_scalar()) {
      const double x = a.scalar();
      for (double& y : b.vec()) y = apply_binary(op, x, y);
      return b;
    }
    if (b.is_scalar()) {
      const double y = b.scalar();
      for (double& x : a.vec()) x = apply_binary(op, x, y);
      return a;
    }
    auto& xs = a.vec();
    const auto& ys = b.vec();
    if (xs.size() != ys.size()) {
      shape("vector lengths " + std::to_string(xs.size()) + " and " + std::to_string(ys.size()) +
            " do not match");
    }
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = apply_binary(op, xs[i], ys[i]);
    return a;
  }

  double unary_fn(Builtin fn, double x) const {
    switch (fn) {
      case Builtin::Abs: return std::fabs(x);
      case Builtin::Exp: return checked(std::exp(x), "exp");
      case Builtin::Log:
        if (x <= 0.0) domain("log of a non-positive number");
        return checked(std::log(x), "log");
      case Builtin::Sqrt:
        if (x < 0.0) domain("sqrt of a negative number");
        return std::sqrt(x);
      case Builtin::Sigmoid: return stable_sigmoid(x);
      case Builtin::Pdf:
      case Builtin::Cdf:
      case Builtin::Survival: {
        if (dist_ == nullptr) domain("pdf/cdf/survival are not bound in this setting");
        try {
          const double r = fn == Builtin::Pdf   ? dist_->pdf(x)
                           : fn == Builtin::Cdf ? dist_->cdf(x)
                                                : dist_->survival(x);
          return checked(r, builtin_name(fn).data());
        } catch (const dist::DistributionError& err) {
          domain(err.what());
        }
      }
      default: break;
    }
    return x;
  }

  static const std::vector<double>& nonempty(const Value& v, Builtin fn) {
    if (v.is_scalar()) {
      shape(std::string(builtin_name(fn)) + " expects a vector");
    }
    if (v.vec().empty()) domain(std::string(builtin_name(fn)) + " of an empty vector");
    return v.vec();
  }

  Value call(const Expr& e) {
    const Builtin fn = e.fn;
    if (is_elementwise(fn)) {
      Value x = eval(*e.kids[0]);
      if (x.is_scalar()) return unary_fn(fn, x.scalar());
      for (double& d : x.vec()) d = unary_fn(fn, d);
      return x;
    }
    if ((fn == Builtin::Min || fn == Builtin::Max) && e.kids.size() > 1) {
      double best = 0.0;
      for (std::size_t i = 0; i < e.kids.size(); ++i) {
        const double x = scalar(eval(*e.kids[i]), "min/max argument");
        if (i == 0 || (fn == Builtin::Min ? x < best : x > best)) best = x;
      }
      return best;
    }
    Value x = eval(*e.kids[0]);
    switch (fn) {
      case Builtin::Min: {
        const auto& v = nonempty(x, fn);
        return *std::min_element(v.begin(), v.end());
      }
      case Builtin::Max: {
        const auto& v = nonempty(x, fn);
        return *std::max_element(v.begin(), v.end());
      }
      case Builtin::Sum:
        if (x.is_scalar()) return x;
        return checked(std::accumulate(x.vec().begin(), x.vec().end(), 0.0), "sum");
      case Builtin::Mean: {
        if (x.is_scalar()) return x;
        const auto& v = nonempty(x, fn);
        return checked(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()),
                       "mean");
      }
      case Builtin::Median: {
        if (x.is_scalar()) return x;
        std::vector<double> v = nonempty(x, fn);
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
      }
      case Builtin::Sorted: {
        if (x.is_scalar()) shape("sorted expects a vector");
        std::sort(x.vec().begin(), x.vec().end());
        return x;
      }
      case Builtin::Len:
        if (x.is_scalar()) shape("len expects a vector");
        return static_cast<double>(x.vec().size());
      default: break;
    }
    return x;
  }

  std::size_t budget_;
  std::size_t steps_ = 0;
  const dist::MarginalDistribution* dist_;
  std::vector<Value> slots_;
};

void check_input(const HeuristicProgram& program, const Value& input) {
  const auto& sig = program.signature();
  if (sig.vector_input()) {
    if (input.is_scalar() || input.vec().size() != sig.arity) {
      shape("input '" + program.param() + "' must be a vector of length " +
            std::to_string(sig.arity));
    }
  } else if (!input.is_scalar()) {
    shape("input '" + program.param() + "' must be a number");
  }
}

void check_output(const HeuristicProgram& program, const Value& out) {
  const auto& sig = program.signature();
  if (sig.vector_output()) {
    if (out.is_scalar() || out.vec().size() != sig.output_length()) {
      shape("heuristic must return a vector of length " + std::to_string(sig.output_length()));
    }
  } else if (!out.is_scalar()) {
    shape("heuristic must return a number");
  }
}

Value run(const HeuristicProgram& program, Value input, const dist::MarginalDistribution* d,
          std::size_t budget) {
  check_input(program, input);
  Interpreter interp(budget, d, static_cast<std::size_t>(std::max(program.slot_count(), 1)));
  interp.slots()[0] = std::move(input);
  Value out = interp.eval(*program.body());
  check_output(program, out);
  return out;
}

}  // namespace

Value evaluate(const HeuristicProgram& program, const EvalContext& ctx) {
  for (const auto& [name, value] : ctx.bindings) {
    if (name == program.param()) return run(program, value, ctx.distribution, ctx.step_budget);
  }
  shape("parameter '" + program.param() + "' is not bound");
}

double eval_scalar(const HeuristicProgram& program, double input,
                   const dist::MarginalDistribution* distribution, std::size_t step_budget) {
  return run(program, Value(input), distribution, step_budget).scalar();
}

double eval_scalar(const HeuristicProgram& program, std::span<const double> input,
                   const dist::MarginalDistribution* distribution, std::size_t step_budget) {
  return run(program, Value(std::vector<double>(input.begin(), input.end())), distribution,
             step_budget)
      .scalar();
}

std::vector<double> eval_vector(const HeuristicProgram& program, std::span<const double> input,
                                const dist::MarginalDistribution* distribution,
                                std::size_t step_budget) {
  Value out = run(program, Value(std::vector<double>(input.begin(), input.end())), distribution,
                  step_budget);
  return std::move(out.vec());
}

}  // namespace amd::dsl
