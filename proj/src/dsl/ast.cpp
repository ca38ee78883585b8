#include "amd/dsl.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <utility>

namespace amd::dsl {

namespace {

constexpr std::array<std::pair<Builtin, std::string_view>, 15> kBuiltins{{
    {Builtin::Min, "min"},         {Builtin::Max, "max"},       {Builtin::Abs, "abs"},
    {Builtin::Sum, "sum"},         {Builtin::Mean, "mean"},     {Builtin::Median, "median"},
    {Builtin::Sorted, "sorted"},   {Builtin::Len, "len"},       {Builtin::Exp, "exp"},
    {Builtin::Log, "log"},         {Builtin::Sqrt, "sqrt"},     {Builtin::Sigmoid, "sigmoid"},
    {Builtin::Pdf, "pdf"},         {Builtin::Cdf, "cdf"},       {Builtin::Survival, "survival"},
}};

ExprPtr finish(Expr e) { return std::make_shared<const Expr>(std::move(e)); }

}  // namespace

std::string_view HeuristicSignature::default_param() const {
  switch (kind) {
    case SignatureKind::PerBidderScore: return "v";
    case SignatureKind::JointAllocation: return "bids";
    case SignatureKind::Redistribution: return "others_bids";
  }
  return "v";
}

std::string HeuristicSignature::name() const {
  switch (kind) {
    case SignatureKind::PerBidderScore: return "per_bidder_score";
    case SignatureKind::JointAllocation: return "joint_allocation(" + std::to_string(arity) + ")";
    case SignatureKind::Redistribution: return "redistribution(" + std::to_string(arity) + ")";
  }
  return "unknown";
}

std::string_view builtin_name(Builtin b) {
  for (const auto& [fn, name] : kBuiltins) {
    if (fn == b) return name;
  }
  return "?";
}

bool lookup_builtin(std::string_view name, Builtin* out) {
  for (const auto& [fn, n] : kBuiltins) {
    if (n == name) {
      *out = fn;
      return true;
    }
  }
  return false;
}

bool is_elementwise(Builtin b) {
  switch (b) {
    case Builtin::Abs:
    case Builtin::Exp:
    case Builtin::Log:
    case Builtin::Sqrt:
    case Builtin::Sigmoid:
    case Builtin::Pdf:
    case Builtin::Cdf:
    case Builtin::Survival:
      return true;
    default:
      return false;
  }
}

ExprPtr make_number(double value) {
  Expr e;
  e.kind = ExprKind::Number;
  e.value = value;
  return finish(std::move(e));
}

ExprPtr make_var(std::string name, int slot) {
  Expr e;
  e.kind = ExprKind::Var;
  e.name = std::move(name);
  e.slot = slot;
  return finish(std::move(e));
}

ExprPtr make_vec(std::vector<ExprPtr> elements) {
  Expr e;
  e.kind = ExprKind::VecLit;
  e.kids = std::move(elements);
  return finish(std::move(e));
}

ExprPtr make_index(ExprPtr base, ExprPtr index) {
  Expr e;
  e.kind = ExprKind::Index;
  e.kids = {std::move(base), std::move(index)};
  return finish(std::move(e));
}

ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
  Expr e;
  e.kind = ExprKind::Binary;
  e.bop = op;
  e.kids = {std::move(lhs), std::move(rhs)};
  return finish(std::move(e));
}

ExprPtr make_neg(ExprPtr operand) {
  Expr e;
  e.kind = ExprKind::Neg;
  e.kids = {std::move(operand)};
  return finish(std::move(e));
}

ExprPtr make_compare(CompareOp op, ExprPtr lhs, ExprPtr rhs) {
  Expr e;
  e.kind = ExprKind::Compare;
  e.cop = op;
  e.kids = {std::move(lhs), std::move(rhs)};
  return finish(std::move(e));
}

ExprPtr make_cond(ExprPtr condition, ExprPtr then_value, ExprPtr else_value) {
  Expr e;
  e.kind = ExprKind::Cond;
  e.kids = {std::move(condition), std::move(then_value), std::move(else_value)};
  return finish(std::move(e));
}

ExprPtr make_call(Builtin fn, std::vector<ExprPtr> args) {
  Expr e;
  e.kind = ExprKind::Call;
  e.fn = fn;
  e.kids = std::move(args);
  return finish(std::move(e));
}

ExprPtr make_let(std::vector<std::string> names, std::vector<ExprPtr> values, ExprPtr body) {
  if (names.empty()) return body;
  Expr e;
  e.kind = ExprKind::Let;
  e.binders = std::move(names);
  e.binder_slots.resize(e.binders.size());
  for (std::size_t i = 0; i < e.binders.size(); ++i) e.binder_slots[i] = static_cast<int>(i) + 1;
  e.kids = std::move(values);
  e.kids.push_back(std::move(body));
  return finish(std::move(e));
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.kind != b.kind || a.kids.size() != b.kids.size()) return false;
  switch (a.kind) {
    case ExprKind::Number:
      if (a.value != b.value) return false;
      break;
    case ExprKind::Var:
      if (a.name != b.name) return false;
      break;
    case ExprKind::Binary:
      if (a.bop != b.bop) return false;
      break;
    case ExprKind::Compare:
      if (a.cop != b.cop) return false;
      break;
    case ExprKind::Call:
      if (a.fn != b.fn) return false;
      break;
    case ExprKind::Let:
      if (a.binders != b.binders) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < a.kids.size(); ++i) {
    if (!structurally_equal(*a.kids[i], *b.kids[i])) return false;
  }
  return true;
}

std::size_t structural_size(const Expr& e) {
  std::size_t n = 1;
  for (const auto& k : e.kids) n += structural_size(*k);
  return n;
}

std::size_t structural_size(const HeuristicProgram& program) {
  return 1 + structural_size(*program.body());
}

std::size_t expr_depth(const Expr& e) {
  std::size_t d = 0;
  for (const auto& k : e.kids) d = std::max(d, 1 + expr_depth(*k));
  return d;
}

ParseError::ParseError(Kind kind, int line, int column, const std::string& message)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << to_string(kind) << " at " << line << ":" << column << ": " << message;
        return os.str();
      }()),
      kind_(kind),
      line_(line),
      column_(column),
      message_(message) {}

std::string_view to_string(ParseError::Kind kind) {
  switch (kind) {
    case ParseError::Kind::Syntax: return "SyntaxError";
    case ParseError::Kind::ForbiddenConstruct: return "ForbiddenConstruct";
    case ParseError::Kind::SignatureMismatch: return "SignatureMismatch";
  }
  return "ParseError";
}

std::string_view to_string(EvalError::Kind kind) {
  switch (kind) {
    case EvalError::Kind::Domain: return "DomainError";
    case EvalError::Kind::Shape: return "ShapeError";
    case EvalError::Kind::Budget: return "BudgetExceeded";
  }
  return "EvalError";
}

HeuristicProgram::HeuristicProgram(std::string source, std::string function_name,
                                   std::string param, ExprPtr body, HeuristicSignature signature,
                                   int slot_count)
    : source_(std::move(source)),
      function_name_(std::move(function_name)),
      param_(std::move(param)),
      body_(std::move(body)),
      signature_(signature),
      slot_count_(slot_count) {}

bool HeuristicProgram::ast_equal(const HeuristicProgram& other) const {
  return param_ == other.param_ && structurally_equal(*body_, *other.body_);
}

}  // namespace amd::dsl
