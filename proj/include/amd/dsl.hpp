#pragma once

// Sandboxed heuristic language. Programs have the shape
//
//   def heuristic(x):
//     name = <expr>        (zero or more)
//     return <expr>
//
// and are interpreted, never compiled or executed natively. See
// docs/grammar.md for the full grammar and the alias table.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace amd::dist {
class MarginalDistribution;
}

namespace amd::dsl {

inline constexpr std::size_t kDefaultStepBudget = 10000;

enum class SignatureKind { PerBidderScore, JointAllocation, Redistribution };

/// What a heuristic consumes and produces. `arity` is the length of the
/// single formal input: 1 (scalar v), n (bids) or n-1 (sorted others).
struct HeuristicSignature {
  SignatureKind kind = SignatureKind::PerBidderScore;
  std::size_t arity = 1;

  static HeuristicSignature per_bidder() { return {SignatureKind::PerBidderScore, 1}; }
  static HeuristicSignature joint(std::size_t n_bidders) {
    return {SignatureKind::JointAllocation, n_bidders};
  }
  static HeuristicSignature redistribution(std::size_t n_bidders) {
    return {SignatureKind::Redistribution, n_bidders - 1};
  }

  bool vector_input() const { return kind != SignatureKind::PerBidderScore; }
  bool vector_output() const { return kind == SignatureKind::JointAllocation; }
  std::size_t output_length() const { return vector_output() ? arity + 1 : 1; }
  /// Parameter name used when printing generated programs.
  std::string_view default_param() const;
  std::string name() const;

  friend bool operator==(const HeuristicSignature&, const HeuristicSignature&) = default;
};

enum class ExprKind { Number, Var, VecLit, Index, Binary, Neg, Compare, Cond, Call, Let };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };
enum class CompareOp { Lt, Le, Gt, Ge, Eq, Ne };
enum class Builtin {
  Min, Max, Abs, Sum, Mean, Median, Sorted, Len,
  Exp, Log, Sqrt, Sigmoid, Pdf, Cdf, Survival,
};

std::string_view builtin_name(Builtin b);
/// Looks up a whitelisted builtin by its surface name.
bool lookup_builtin(std::string_view name, Builtin* out);
/// Builtins that take exactly one argument and map elementwise.
bool is_elementwise(Builtin b);

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable AST node. Field use depends on `kind`:
///   Number   value (always finite and >= 0; negation is a Neg node)
///   Var      name, slot
///   VecLit   kids = elements
///   Index    kids = {base, index}
///   Binary   bop, kids = {lhs, rhs}
///   Neg      kids = {operand}
///   Compare  cop, kids = {lhs, rhs}
///   Cond     kids = {condition, then, else}
///   Call     fn, kids = arguments
///   Let      binders, kids = {binding values..., body}
struct Expr {
  ExprKind kind = ExprKind::Number;
  double value = 0.0;
  std::string name;
  int slot = 0;
  BinaryOp bop = BinaryOp::Add;
  CompareOp cop = CompareOp::Lt;
  Builtin fn = Builtin::Min;
  std::vector<ExprPtr> kids;
  std::vector<std::string> binders;
  std::vector<int> binder_slots;
  int line = 0;
  int column = 0;
};

// Node constructors. Variables default to slot 0 (the formal parameter);
// re-parse printed text to resolve let-bound slots.
ExprPtr make_number(double value);
ExprPtr make_var(std::string name, int slot = 0);
ExprPtr make_vec(std::vector<ExprPtr> elements);
ExprPtr make_index(ExprPtr base, ExprPtr index);
ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_neg(ExprPtr operand);
ExprPtr make_compare(CompareOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_cond(ExprPtr condition, ExprPtr then_value, ExprPtr else_value);
ExprPtr make_call(Builtin fn, std::vector<ExprPtr> args);
ExprPtr make_let(std::vector<std::string> names, std::vector<ExprPtr> values, ExprPtr body);

bool structurally_equal(const Expr& a, const Expr& b);

class ParseError : public std::runtime_error {
 public:
  enum class Kind { Syntax, ForbiddenConstruct, SignatureMismatch };

  ParseError(Kind kind, int line, int column, const std::string& message);

  Kind kind() const noexcept { return kind_; }
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& message() const noexcept { return message_; }

 private:
  Kind kind_;
  int line_;
  int column_;
  std::string message_;
};

class EvalError : public std::runtime_error {
 public:
  enum class Kind { Domain, Shape, Budget };

  EvalError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::string_view to_string(ParseError::Kind kind);
std::string_view to_string(EvalError::Kind kind);

/// A parsed candidate mechanism component.
class HeuristicProgram {
 public:
  HeuristicProgram(std::string source, std::string function_name, std::string param, ExprPtr body,
                   HeuristicSignature signature, int slot_count);

  const std::string& source() const noexcept { return source_; }
  const std::string& function_name() const noexcept { return function_name_; }
  const std::string& param() const noexcept { return param_; }
  const ExprPtr& body() const noexcept { return body_; }
  const HeuristicSignature& signature() const noexcept { return signature_; }
  int slot_count() const noexcept { return slot_count_; }

  /// Same parameter name and structurally equal body.
  bool ast_equal(const HeuristicProgram& other) const;

 private:
  std::string source_;
  std::string function_name_;
  std::string param_;
  ExprPtr body_;
  HeuristicSignature signature_;
  int slot_count_;
};

/// Parses `source` and checks it against `signature`. Qualified names
/// (np.min, math.exp, ...) are rewritten through the alias table first.
HeuristicProgram parse(std::string_view source, const HeuristicSignature& signature);

/// Canonical text; parse(pretty_print(p)) is AST-equal to p.
std::string pretty_print(const HeuristicProgram& program);
std::string pretty_print(const std::string& param, const Expr& body);
/// Expression text alone (no def / return).
std::string expr_to_string(const Expr& e);

/// Node count including one node for the function wrapper.
std::size_t structural_size(const HeuristicProgram& program);
std::size_t structural_size(const Expr& e);
/// Longest root-to-leaf path in nodes, leaves at depth 0.
std::size_t expr_depth(const Expr& e);

class Value {
 public:
  Value() = default;
  Value(double x) : v_(x) {}  // NOLINT(google-explicit-constructor)
  Value(std::vector<double> xs) : v_(std::move(xs)) {}  // NOLINT(google-explicit-constructor)

  bool is_scalar() const noexcept { return std::holds_alternative<double>(v_); }
  double scalar() const { return std::get<double>(v_); }
  const std::vector<double>& vec() const { return std::get<std::vector<double>>(v_); }
  std::vector<double>& vec() { return std::get<std::vector<double>>(v_); }

  friend bool operator==(const Value&, const Value&) = default;

 private:
  std::variant<double, std::vector<double>> v_{0.0};
};

struct EvalContext {
  /// name -> value; must bind the program's parameter.
  std::vector<std::pair<std::string, Value>> bindings;
  /// Backs pdf / cdf / survival; calling them unbound is a DomainError.
  const dist::MarginalDistribution* distribution = nullptr;
  std::size_t step_budget = kDefaultStepBudget;
};

/// Evaluates the program. Never aborts: every failure is an EvalError.
Value evaluate(const HeuristicProgram& program, const EvalContext& ctx);

// Fast paths used by the mechanisms. They bind the parameter positionally
// and check the return shape against the signature.
double eval_scalar(const HeuristicProgram& program, double input,
                   const dist::MarginalDistribution* distribution = nullptr,
                   std::size_t step_budget = kDefaultStepBudget);
double eval_scalar(const HeuristicProgram& program, std::span<const double> input,
                   const dist::MarginalDistribution* distribution = nullptr,
                   std::size_t step_budget = kDefaultStepBudget);
std::vector<double> eval_vector(const HeuristicProgram& program, std::span<const double> input,
                                const dist::MarginalDistribution* distribution = nullptr,
                                std::size_t step_budget = kDefaultStepBudget);

}  // namespace amd::dsl
