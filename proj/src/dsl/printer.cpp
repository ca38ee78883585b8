#include <charconv>
#include <stdexcept>
#include <string>

#include "amd/dsl.hpp"

namespace amd::dsl {

namespace {

// Python binding strength, loosest first.
enum Prec { kCond = 1, kCompare, kAdditive, kMultiplicative, kUnary, kPower, kPostfix };

int precedence(const Expr& e) {
  switch (e.kind) {
    case ExprKind::Cond: return kCond;
    case ExprKind::Compare: return kCompare;
    case ExprKind::Binary:
      switch (e.bop) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return kAdditive;
        case BinaryOp::Mul:
        case BinaryOp::Div: return kMultiplicative;
        case BinaryOp::Pow: return kPower;
      }
      return kPostfix;
    case ExprKind::Neg: return kUnary;
    case ExprKind::Number: return e.value < 0.0 ? kUnary : kPostfix;
    default: return kPostfix;
  }
}

std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

const char* binary_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return " + ";
    case BinaryOp::Sub: return " - ";
    case BinaryOp::Mul: return " * ";
    case BinaryOp::Div: return " / ";
    case BinaryOp::Pow: return " ** ";
  }
  return " ? ";
}

const char* compare_symbol(CompareOp op) {
  switch (op) {
    case CompareOp::Lt: return " < ";
    case CompareOp::Le: return " <= ";
    case CompareOp::Gt: return " > ";
    case CompareOp::Ge: return " >= ";
    case CompareOp::Eq: return " == ";
    case CompareOp::Ne: return " != ";
  }
  return " ? ";
}

void emit(const Expr& e, std::string& out);

void emit_at(const Expr& e, int min_prec, std::string& out) {
  if (precedence(e) < min_prec) {
    out += '(';
    emit(e, out);
    out += ')';
  } else {
    emit(e, out);
  }
}

void emit(const Expr& e, std::string& out) {
  switch (e.kind) {
    case ExprKind::Number:
      out += format_number(e.value);
      return;
    case ExprKind::Var:
      out += e.name;
      return;
    case ExprKind::VecLit:
      out += '[';
      for (std::size_t i = 0; i < e.kids.size(); ++i) {
        if (i > 0) out += ", ";
        emit_at(*e.kids[i], kCond, out);
      }
      out += ']';
      return;
    case ExprKind::Index:
      emit_at(*e.kids[0], kPostfix, out);
      out += '[';
      emit_at(*e.kids[1], kCond, out);
      out += ']';
      return;
    case ExprKind::Binary: {
      if (e.bop == BinaryOp::Pow) {
        emit_at(*e.kids[0], kPostfix, out);
        out += binary_symbol(e.bop);
        emit_at(*e.kids[1], kUnary, out);
        return;
      }
      const int p = precedence(e);
      emit_at(*e.kids[0], p, out);
      out += binary_symbol(e.bop);
      emit_at(*e.kids[1], p + 1, out);
      return;
    }
    case ExprKind::Neg:
      out += '-';
      emit_at(*e.kids[0], kUnary, out);
      return;
    case ExprKind::Compare:
      emit_at(*e.kids[0], kAdditive, out);
      out += compare_symbol(e.cop);
      emit_at(*e.kids[1], kAdditive, out);
      return;
    case ExprKind::Cond:
      emit_at(*e.kids[1], kCompare, out);
      out += " if ";
      emit_at(*e.kids[0], kCompare, out);
      out += " else ";
      emit_at(*e.kids[2], kCond, out);
      return;
    case ExprKind::Call:
      out += builtin_name(e.fn);
      out += '(';
      for (std::size_t i = 0; i < e.kids.size(); ++i) {
        if (i > 0) out += ", ";
        emit_at(*e.kids[i], kCond, out);
      }
      out += ')';
      return;
    case ExprKind::Let:
      throw std::logic_error("let-binding is only printable at the top level");
  }
}

}  // namespace

std::string expr_to_string(const Expr& e) {
  std::string out;
  emit(e, out);
  return out;
}

std::string pretty_print(const std::string& param, const Expr& body) {
  std::string out = "def heuristic(" + param + "):";
  if (body.kind != ExprKind::Let) {
    out += " return ";
    emit(body, out);
    return out;
  }
  const std::size_t n = body.binders.size();
  for (std::size_t i = 0; i < n; ++i) {
    out += "\n  " + body.binders[i] + " = ";
    emit(*body.kids[i], out);
  }
  out += "\n  return ";
  emit(*body.kids[n], out);
  return out;
}

std::string pretty_print(const HeuristicProgram& program) {
  return pretty_print(program.param(), *program.body());
}

}  // namespace amd::dsl
