#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amd/dsl.hpp"

namespace amd::dsl {

namespace {

using Kind = ParseError::Kind;

enum class Tok { Number, Ident, String, Op, Newline, End };

struct Token {
  Tok type = Tok::End;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

[[noreturn]] void fail(Kind kind, int line, int column, const std::string& msg) {
  throw ParseError(kind, line, column, msg);
}

[[noreturn]] void fail(Kind kind, const Token& t, const std::string& msg) {
  fail(kind, t.line, t.column, msg);
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
        continue;
      }
      if (c == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
        advance();
        advance();
        continue;
      }
      if (c == '\n') {
        if (depth == 0) out.push_back(make(Tok::Newline, "\n"));
        advance();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
        advance();
        continue;
      }
      if (static_cast<unsigned char>(c) >= 0x80) {
        fail(Kind::Syntax, line_, col_, "non-ASCII character outside a comment");
      }
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && pos_ + 1 < src_.size() &&
           std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        out.push_back(number());
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        out.push_back(identifier());
        continue;
      }
      if (c == '"' || c == '\'') {
        out.push_back(string_literal());
        continue;
      }
      Token t = op();
      if (t.text == "(" || t.text == "[") ++depth;
      if ((t.text == ")" || t.text == "]") && depth > 0) --depth;
      out.push_back(t);
    }
    Token end = make(Tok::End, "");
    out.push_back(end);
    return out;
  }

 private:
  Token make(Tok type, std::string text) const {
    Token t;
    t.type = type;
    t.text = std::move(text);
    t.line = line_;
    t.column = col_;
    return t;
  }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  Token number() {
    Token t = make(Tok::Number, "");
    const std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    };
    digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      advance();
      digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      const std::size_t save = pos_;
      const int save_col = col_;
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        digits();
      } else {
        pos_ = save;
        col_ = save_col;
      }
    }
    t.text = std::string(src_.substr(start, pos_ - start));
    double value = 0.0;
    const auto* first = t.text.data();
    const auto* last = t.text.data() + t.text.size();
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) {
      fail(Kind::Syntax, t, "malformed number '" + t.text + "'");
    }
    t.number = value;
    if (pos_ < src_.size() &&
        (std::isalpha(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      fail(Kind::Syntax, line_, col_, "unexpected character after number");
    }
    return t;
  }

  Token identifier() {
    Token t = make(Tok::Ident, "");
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      advance();
    }
    t.text = std::string(src_.substr(start, pos_ - start));
    return t;
  }

  Token string_literal() {
    Token t = make(Tok::String, "");
    const char quote = src_[pos_];
    const bool triple = src_.substr(pos_, 3) == std::string(3, quote);
    const std::size_t open = triple ? 3 : 1;
    for (std::size_t i = 0; i < open; ++i) advance();
    while (true) {
      if (pos_ >= src_.size()) fail(Kind::Syntax, t, "unterminated string literal");
      if (triple ? src_.substr(pos_, 3) == std::string(3, quote) : src_[pos_] == quote) break;
      if (!triple && src_[pos_] == '\n') fail(Kind::Syntax, t, "unterminated string literal");
      if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) advance();
      advance();
    }
    for (std::size_t i = 0; i < open; ++i) advance();
    return t;
  }

  Token op() {
    static const std::vector<std::string> kOps = {"**", "<=", ">=", "==", "!=", "//", "+=", "-=",
                                                  "*=", "/=", "->", "(",  ")",  "[",  "]",  ",",
                                                  ":",  "=",  "+",  "-",  "*",  "/",  "<",  ">",
                                                  ";",  ".",  "%",  "^",  "@",  "{",  "}",  "!",
                                                  "&",  "|",  "~"};
    for (const auto& o : kOps) {
      if (src_.substr(pos_, o.size()) == o) {
        Token t = make(Tok::Op, o);
        for (std::size_t i = 0; i < o.size(); ++i) advance();
        return t;
      }
    }
    fail(Kind::Syntax, line_, col_, std::string("unexpected character '") + src_[pos_] + "'");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// ---------------------------------------------------------------------------
// Alias rewrite: collapses `a.b.c` into one identifier token.
// ---------------------------------------------------------------------------

const std::map<std::string, std::string>& alias_functions() {
  static const std::map<std::string, std::string> table = {
      {"min", "min"},       {"amin", "min"},       {"max", "max"},   {"amax", "max"},
      {"abs", "abs"},       {"fabs", "abs"},       {"absolute", "abs"},
      {"sum", "sum"},       {"mean", "mean"},      {"average", "mean"},
      {"median", "median"}, {"sort", "sorted"},    {"sorted", "sorted"},
      {"exp", "exp"},       {"log", "log"},        {"sqrt", "sqrt"}, {"expit", "sigmoid"},
      {"sigmoid", "sigmoid"},
  };
  return table;
}

const std::set<std::string>& alias_modules() {
  static const std::set<std::string> mods = {"np", "numpy", "math", "torch", "scipy.special",
                                             "special"};
  return mods;
}

std::vector<Token> rewrite_aliases(std::vector<Token> toks) {
  std::vector<Token> out;
  out.reserve(toks.size());
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].type != Tok::Ident || i + 2 >= toks.size() || toks[i + 1].text != "." ||
        toks[i + 1].type != Tok::Op) {
      out.push_back(toks[i]);
      continue;
    }
    Token head = toks[i];
    std::string qualified = head.text;
    std::size_t j = i;
    while (j + 2 < toks.size() && toks[j + 1].type == Tok::Op && toks[j + 1].text == "." &&
           toks[j + 2].type == Tok::Ident) {
      qualified += "." + toks[j + 2].text;
      j += 2;
    }
    const auto dot = qualified.rfind('.');
    const std::string module = qualified.substr(0, dot);
    const std::string member = qualified.substr(dot + 1);
    if (alias_modules().count(module) == 0) {
      fail(Kind::ForbiddenConstruct, head, "attribute access '" + qualified + "' is not allowed");
    }
    Token t = head;
    if (member == "pi" || member == "e") {
      t.type = Tok::Number;
      t.number = member == "pi" ? std::numbers::pi : std::numbers::e;
      t.text = qualified;
    } else {
      auto it = alias_functions().find(member);
      if (it == alias_functions().end()) {
        fail(Kind::ForbiddenConstruct, head, "'" + qualified + "' is not a whitelisted builtin");
      }
      t.text = it->second;
    }
    out.push_back(t);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

const std::set<std::string>& forbidden_keywords() {
  static const std::set<std::string> kw = {
      "for",   "while",  "import", "from",    "lambda", "def",   "class", "with",
      "try",   "except", "yield",  "global",  "nonlocal", "del", "assert", "raise",
      "async", "await",  "exec",   "eval",    "open",   "print", "input", "__import__",
      "break", "continue", "pass", "finally", "getattr", "setattr", "compile", "globals",
      "locals", "random", "time", "os", "sys"};
  return kw;
}

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> kw = {"if", "else", "elif", "return", "and", "or", "not",
                                           "in", "is", "True", "False", "None"};
  return kw;
}

enum class Shape { Scalar, Vector, Bool, Unknown };

struct ShapeInfo {
  Shape shape = Shape::Unknown;
  long length = -1;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, const HeuristicSignature& sig) : t_(std::move(toks)), sig_(sig) {}

  HeuristicProgram program(std::string source) {
    skip_newlines();
    const Token& def = peek();
    if (def.type != Tok::Ident || def.text != "def") {
      if (def.type == Tok::Ident && forbidden_keywords().count(def.text)) {
        fail(Kind::ForbiddenConstruct, def, "'" + def.text + "' is not allowed");
      }
      fail(Kind::Syntax, def, "expected 'def' at start of program");
    }
    next();
    const Token name = expect_ident("function name");
    expect_op("(");
    std::vector<Token> params;
    if (!is_op(")")) {
      params.push_back(expect_ident("parameter name"));
      while (accept_op(",")) {
        if (is_op(")")) break;
        params.push_back(expect_ident("parameter name"));
      }
    }
    const Token close = expect_op(")");
    if (params.size() != 1) {
      fail(Kind::SignatureMismatch, close,
           "heuristic must take exactly one parameter, got " + std::to_string(params.size()));
    }
    if (accept_op("->")) expression();  // return annotation is ignored
    expect_op(":");

    const std::string param = params[0].text;
    check_binder(params[0]);
    scopes_.push_back({param, 0});
    next_slot_ = 1;

    std::vector<std::string> names;
    std::vector<ExprPtr> values;
    std::vector<int> slots;
    ExprPtr body;
    bool first_statement = true;
    while (true) {
      skip_separators();
      const Token& tok = peek();
      if (tok.type == Tok::End) {
        fail(Kind::Syntax, tok, "missing return statement");
      }
      if (tok.type == Tok::String) {
        if (!first_statement) fail(Kind::Syntax, tok, "string values are not supported");
        next();
        first_statement = false;
        continue;
      }
      first_statement = false;
      if (tok.type == Tok::Ident && tok.text == "return") {
        next();
        body = expression();
        break;
      }
      if (tok.type == Tok::Ident && tok.text == "if") {
        fail(Kind::ForbiddenConstruct, tok,
             "if statements are not supported; use 'a if condition else b'");
      }
      if (tok.type == Tok::Ident && forbidden_keywords().count(tok.text) &&
          !(peek(1).type == Tok::Op && peek(1).text == "=")) {
        fail(Kind::ForbiddenConstruct, tok, "'" + tok.text + "' is not allowed");
      }
      const Token target = expect_ident("assignment target");
      if (!is_op("=")) {
        const Token& bad = peek();
        if (bad.type == Tok::Op && (bad.text == "+=" || bad.text == "-=" || bad.text == "*=" ||
                                    bad.text == "/=")) {
          fail(Kind::Syntax, bad, "augmented assignment is not supported");
        }
        fail(Kind::Syntax, bad, "expected '=' or 'return'");
      }
      next();
      check_binder(target);
      ExprPtr value = expression();
      end_statement();
      const int slot = next_slot_++;
      names.push_back(target.text);
      values.push_back(std::move(value));
      slots.push_back(slot);
      scopes_.push_back({target.text, slot});
    }
    end_statement();
    skip_separators();
    if (peek().type != Tok::End) {
      fail(Kind::Syntax, peek(), "statement after return");
    }

    ExprPtr root = body;
    if (!names.empty()) {
      Expr let;
      let.kind = ExprKind::Let;
      let.binders = std::move(names);
      let.binder_slots = std::move(slots);
      let.kids = std::move(values);
      let.kids.push_back(body);
      root = std::make_shared<const Expr>(std::move(let));
    }

    validate_booleans(*root, false);
    check_return_shape(*root, close);
    return HeuristicProgram(std::move(source), name.text, param, root, sig_, next_slot_);
  }

 private:
  // --- token helpers -------------------------------------------------------
  const Token& peek(std::size_t ahead = 0) const {
    return t_[std::min(i_ + ahead, t_.size() - 1)];
  }
  const Token& next() { return t_[i_ < t_.size() - 1 ? i_++ : i_]; }
  bool is_op(std::string_view op) const {
    return peek().type == Tok::Op && peek().text == op;
  }
  bool is_word(std::string_view w) const {
    return peek().type == Tok::Ident && peek().text == w;
  }
  bool accept_op(std::string_view op) {
    if (!is_op(op)) return false;
    next();
    return true;
  }
  Token expect_op(std::string_view op) {
    if (!is_op(op)) {
      const Token& t = peek();
      fail(Kind::Syntax, t,
           "expected '" + std::string(op) + "' but found " + describe(t));
    }
    return next();
  }
  Token expect_ident(const std::string& what) {
    const Token& t = peek();
    if (t.type != Tok::Ident) fail(Kind::Syntax, t, "expected " + what + " but found " + describe(t));
    return next();
  }
  static std::string describe(const Token& t) {
    switch (t.type) {
      case Tok::End: return "end of input";
      case Tok::Newline: return "end of line";
      case Tok::String: return "string literal";
      default: return "'" + t.text + "'";
    }
  }
  void skip_newlines() {
    while (peek().type == Tok::Newline) next();
  }
  void skip_separators() {
    while (peek().type == Tok::Newline || is_op(";")) next();
  }
  void end_statement() {
    const Token& t = peek();
    if (t.type == Tok::Newline || t.type == Tok::End || is_op(";")) return;
    fail(Kind::Syntax, t, "unexpected " + describe(t) + " after expression");
  }

  void check_binder(const Token& t) {
    Builtin b;
    if (lookup_builtin(t.text, &b)) {
      fail(Kind::Syntax, t, "cannot rebind builtin '" + t.text + "'");
    }
    if (reserved_words().count(t.text)) fail(Kind::Syntax, t, "reserved word '" + t.text + "'");
    if (forbidden_keywords().count(t.text)) {
      fail(Kind::ForbiddenConstruct, t, "'" + t.text + "' is not allowed");
    }
  }

  ExprPtr finish(Expr e, const Token& at) {
    e.line = at.line;
    e.column = at.column;
    return std::make_shared<const Expr>(std::move(e));
  }

  // --- expressions ---------------------------------------------------------
  ExprPtr expression() {
    const Token& start = peek();
    ExprPtr value = comparison();
    if (!is_word("if")) return value;
    next();
    ExprPtr condition = comparison();
    if (!is_word("else")) fail(Kind::Syntax, peek(), "expected 'else' in conditional expression");
    next();
    ExprPtr otherwise = expression();
    Expr e;
    e.kind = ExprKind::Cond;
    e.kids = {std::move(condition), std::move(value), std::move(otherwise)};
    return finish(std::move(e), start);
  }

  ExprPtr comparison() {
    ExprPtr lhs = arith();
    const Token& t = peek();
    static const std::map<std::string, CompareOp> kCmp = {
        {"<", CompareOp::Lt}, {"<=", CompareOp::Le}, {">", CompareOp::Gt},
        {">=", CompareOp::Ge}, {"==", CompareOp::Eq}, {"!=", CompareOp::Ne}};
    if (t.type == Tok::Ident && (t.text == "and" || t.text == "or" || t.text == "not" ||
                                 t.text == "in" || t.text == "is")) {
      fail(Kind::Syntax, t, "boolean operator '" + t.text + "' is not supported");
    }
    if (t.type != Tok::Op) return lhs;
    auto it = kCmp.find(t.text);
    if (it == kCmp.end()) return lhs;
    const Token op = next();
    ExprPtr rhs = arith();
    if (peek().type == Tok::Op && kCmp.count(peek().text)) {
      fail(Kind::Syntax, peek(), "chained comparisons are not supported");
    }
    Expr e;
    e.kind = ExprKind::Compare;
    e.cop = it->second;
    e.kids = {std::move(lhs), std::move(rhs)};
    return finish(std::move(e), op);
  }

  ExprPtr arith() {
    ExprPtr lhs = term();
    while (is_op("+") || is_op("-")) {
      const Token op = next();
      ExprPtr rhs = term();
      Expr e;
      e.kind = ExprKind::Binary;
      e.bop = op.text == "+" ? BinaryOp::Add : BinaryOp::Sub;
      e.kids = {std::move(lhs), std::move(rhs)};
      lhs = finish(std::move(e), op);
    }
    return lhs;
  }

  ExprPtr term() {
    ExprPtr lhs = unary();
    while (true) {
      if (is_op("//") || is_op("%") || is_op("@")) {
        fail(Kind::Syntax, peek(), "operator '" + peek().text + "' is not supported");
      }
      if (!(is_op("*") || is_op("/"))) break;
      const Token op = next();
      ExprPtr rhs = unary();
      Expr e;
      e.kind = ExprKind::Binary;
      e.bop = op.text == "*" ? BinaryOp::Mul : BinaryOp::Div;
      e.kids = {std::move(lhs), std::move(rhs)};
      lhs = finish(std::move(e), op);
    }
    return lhs;
  }

  ExprPtr unary() {
    if (is_op("-")) {
      const Token op = next();
      ExprPtr operand = unary();
      Expr e;
      e.kind = ExprKind::Neg;
      e.kids = {std::move(operand)};
      return finish(std::move(e), op);
    }
    if (is_op("+")) {
      next();
      return unary();
    }
    return power();
  }

  ExprPtr power() {
    ExprPtr base = postfix();
    if (is_op("^")) fail(Kind::Syntax, peek(), "use '**' for powers");
    if (!is_op("**")) return base;
    const Token op = next();
    ExprPtr exponent = unary();
    Expr e;
    e.kind = ExprKind::Binary;
    e.bop = BinaryOp::Pow;
    e.kids = {std::move(base), std::move(exponent)};
    return finish(std::move(e), op);
  }

  ExprPtr postfix() {
    ExprPtr base = atom();
    while (true) {
      if (is_op("[")) {
        const Token open = next();
        if (is_op(":") ) fail(Kind::Syntax, peek(), "slicing is not supported");
        ExprPtr index = expression();
        if (is_op(":")) fail(Kind::Syntax, peek(), "slicing is not supported");
        expect_op("]");
        Expr e;
        e.kind = ExprKind::Index;
        e.kids = {std::move(base), std::move(index)};
        base = finish(std::move(e), open);
        continue;
      }
      if (is_op("(")) fail(Kind::Syntax, peek(), "only builtin functions can be called");
      if (is_op(".")) fail(Kind::ForbiddenConstruct, peek(), "attribute access is not allowed");
      break;
    }
    return base;
  }

  ExprPtr atom() {
    const Token& t = peek();
    if (t.type == Tok::Number) {
      const Token n = next();
      Expr e;
      e.kind = ExprKind::Number;
      e.value = n.number;
      return finish(std::move(e), n);
    }
    if (is_op("(")) {
      next();
      skip_newlines();
      ExprPtr inner = expression();
      if (is_op(",")) fail(Kind::Syntax, peek(), "tuples are not supported");
      expect_op(")");
      return inner;
    }
    if (is_op("[")) {
      const Token open = next();
      std::vector<ExprPtr> elems;
      if (!is_op("]")) {
        elems.push_back(expression());
        while (accept_op(",")) {
          if (is_op("]")) break;
          elems.push_back(expression());
        }
      }
      if (is_word("for")) fail(Kind::ForbiddenConstruct, peek(), "comprehensions are not allowed");
      expect_op("]");
      if (elems.empty()) fail(Kind::Syntax, open, "empty vector literal");
      Expr e;
      e.kind = ExprKind::VecLit;
      e.kids = std::move(elems);
      return finish(std::move(e), open);
    }
    if (t.type == Tok::String) fail(Kind::Syntax, t, "string values are not supported");
    if (t.type != Tok::Ident) fail(Kind::Syntax, t, "unexpected " + describe(t));

    const Token id = next();
    if (forbidden_keywords().count(id.text)) {
      fail(Kind::ForbiddenConstruct, id, "'" + id.text + "' is not allowed");
    }
    if (reserved_words().count(id.text)) {
      fail(Kind::Syntax, id, "unexpected keyword '" + id.text + "'");
    }
    if (is_op("(")) {
      Builtin fn;
      if (!lookup_builtin(id.text, &fn)) {
        fail(Kind::ForbiddenConstruct, id, "call to non-whitelisted function '" + id.text + "'");
      }
      next();
      std::vector<ExprPtr> args;
      if (!is_op(")")) {
        args.push_back(expression());
        while (accept_op(",")) {
          if (is_op(")")) break;
          args.push_back(expression());
        }
      }
      if (is_op("=")) fail(Kind::Syntax, peek(), "keyword arguments are not supported");
      expect_op(")");
      const bool variadic = fn == Builtin::Min || fn == Builtin::Max;
      if (variadic ? args.empty() : args.size() != 1) {
        fail(Kind::Syntax, id,
             "wrong number of arguments to " + id.text + ": " + std::to_string(args.size()));
      }
      Expr e;
      e.kind = ExprKind::Call;
      e.fn = fn;
      e.kids = std::move(args);
      return finish(std::move(e), id);
    }
    Builtin fn;
    if (lookup_builtin(id.text, &fn)) {
      fail(Kind::Syntax, id, "builtin '" + id.text + "' used without a call");
    }
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      if (it->first == id.text) {
        Expr e;
        e.kind = ExprKind::Var;
        e.name = id.text;
        e.slot = it->second;
        return finish(std::move(e), id);
      }
    }
    fail(Kind::ForbiddenConstruct, id, "undefined name '" + id.text + "'");
  }

  // --- post-parse checks ---------------------------------------------------
  void validate_booleans(const Expr& e, bool condition_position) {
    if (e.kind == ExprKind::Compare && !condition_position) {
      fail(Kind::ForbiddenConstruct, e.line, e.column,
           "comparisons may only appear as the condition of a conditional expression");
    }
    if (e.kind == ExprKind::Cond) {
      if (e.kids[0]->kind != ExprKind::Compare) {
        fail(Kind::Syntax, e.kids[0]->line, e.kids[0]->column,
             "condition must be a comparison");
      }
      validate_booleans(*e.kids[0]->kids[0], false);
      validate_booleans(*e.kids[0]->kids[1], false);
      validate_booleans(*e.kids[1], false);
      validate_booleans(*e.kids[2], false);
      return;
    }
    if (e.kind == ExprKind::Compare) {
      validate_booleans(*e.kids[0], false);
      validate_booleans(*e.kids[1], false);
      return;
    }
    for (const auto& k : e.kids) validate_booleans(*k, false);
  }

  ShapeInfo infer(const Expr& e, std::vector<ShapeInfo>& slots) const {
    switch (e.kind) {
      case ExprKind::Number: return {Shape::Scalar, -1};
      case ExprKind::Var:
        return static_cast<std::size_t>(e.slot) < slots.size() ? slots[e.slot] : ShapeInfo{};
      case ExprKind::VecLit: return {Shape::Vector, static_cast<long>(e.kids.size())};
      case ExprKind::Index: return {Shape::Scalar, -1};
      case ExprKind::Compare: return {Shape::Bool, -1};
      case ExprKind::Neg: return infer(*e.kids[0], slots);
      case ExprKind::Binary: {
        const ShapeInfo a = infer(*e.kids[0], slots);
        const ShapeInfo b = infer(*e.kids[1], slots);
        if (a.shape == Shape::Scalar && b.shape == Shape::Scalar) return a;
        if (a.shape == Shape::Vector && b.shape == Shape::Scalar) return a;
        if (a.shape == Shape::Scalar && b.shape == Shape::Vector) return b;
        if (a.shape == Shape::Vector && b.shape == Shape::Vector) {
          return {Shape::Vector, a.length == b.length ? a.length : -1};
        }
        return {};
      }
      case ExprKind::Cond: {
        const ShapeInfo a = infer(*e.kids[1], slots);
        const ShapeInfo b = infer(*e.kids[2], slots);
        if (a.shape == b.shape && a.length == b.length) return a;
        return {};
      }
      case ExprKind::Call: {
        switch (e.fn) {
          case Builtin::Min:
          case Builtin::Max:
          case Builtin::Sum:
          case Builtin::Mean:
          case Builtin::Median:
          case Builtin::Len:
            return {Shape::Scalar, -1};
          case Builtin::Sorted:
            return infer(*e.kids[0], slots);
          default:
            return infer(*e.kids[0], slots);
        }
      }
      case ExprKind::Let: {
        const std::size_t n = e.binders.size();
        for (std::size_t i = 0; i < n; ++i) {
          const ShapeInfo s = infer(*e.kids[i], slots);
          const auto slot = static_cast<std::size_t>(e.binder_slots[i]);
          if (slots.size() <= slot) slots.resize(slot + 1);
          slots[slot] = s;
        }
        return infer(*e.kids[n], slots);
      }
    }
    return {};
  }

  void check_return_shape(const Expr& root, const Token& at) const {
    std::vector<ShapeInfo> slots(1);
    slots[0] = sig_.vector_input() ? ShapeInfo{Shape::Vector, static_cast<long>(sig_.arity)}
                                   : ShapeInfo{Shape::Scalar, -1};
    const ShapeInfo out = infer(root, slots);
    if (sig_.vector_output()) {
      const long want = static_cast<long>(sig_.output_length());
      if (out.shape == Shape::Scalar) {
        fail(Kind::SignatureMismatch, at,
             "heuristic must return a vector of length " + std::to_string(want));
      }
      if (out.shape == Shape::Vector && out.length >= 0 && out.length != want) {
        fail(Kind::SignatureMismatch, at,
             "heuristic returns a vector of length " + std::to_string(out.length) +
                 ", expected " + std::to_string(want));
      }
    } else if (out.shape == Shape::Vector) {
      fail(Kind::SignatureMismatch, at, "heuristic must return a single number");
    }
  }

  std::vector<Token> t_;
  std::size_t i_ = 0;
  HeuristicSignature sig_;
  std::vector<std::pair<std::string, int>> scopes_;
  int next_slot_ = 1;
};

}  // namespace

HeuristicProgram parse(std::string_view source, const HeuristicSignature& signature) {
  std::vector<Token> toks = rewrite_aliases(Lexer(source).run());
  Parser p(std::move(toks), signature);
  return p.program(std::string(source));
}

}  // namespace amd::dsl
