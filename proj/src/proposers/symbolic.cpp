#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "amd/distributions.hpp"
#include "amd/proposers.hpp"

namespace amd::prop {

using dsl::Builtin;
using dsl::Expr;
using dsl::ExprKind;
using dsl::ExprPtr;

namespace {

ExprPtr with_kids(const Expr& e, std::vector<ExprPtr> kids) {
  auto copy = std::make_shared<Expr>(e);
  copy->kids = std::move(kids);
  return copy;
}

bool is_number(const ExprPtr& e, double v) { return e->kind == ExprKind::Number && e->value == v; }

bool variable_free(const Expr& e) {
  if (e.kind == ExprKind::Var || e.kind == ExprKind::Let) return false;
  if (e.kind == ExprKind::Call &&
      (e.fn == Builtin::Pdf || e.fn == Builtin::Cdf || e.fn == Builtin::Survival)) {
    return false;  // depend on the bound distribution
  }
  return std::all_of(e.kids.begin(), e.kids.end(), [](const ExprPtr& k) { return variable_free(*k); });
}

ExprPtr number_expr(double v) {
  return v < 0.0 ? dsl::make_neg(dsl::make_number(-v)) : dsl::make_number(v);
}

// Four significant digits keeps jittered constants readable.
double round_sig(double v, int digits = 4) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  const double mag = std::pow(10.0, digits - 1 - std::floor(std::log10(std::abs(v))));
  return std::round(v * mag) / mag;
}

ExprPtr rename_param(const ExprPtr& e, const std::string& name) {
  if (e->kind == ExprKind::Var && e->slot == 0) return dsl::make_var(name);
  if (e->kids.empty()) return e;
  std::vector<ExprPtr> kids;
  for (const auto& k : e->kids) kids.push_back(rename_param(k, name));
  return with_kids(*e, std::move(kids));
}

}  // namespace

ExprPtr inline_lets(const ExprPtr& root) {
  std::map<int, ExprPtr> env;
  std::function<ExprPtr(const ExprPtr&)> go = [&](const ExprPtr& e) -> ExprPtr {
    if (e->kind == ExprKind::Var) {
      auto it = env.find(e->slot);
      return it == env.end() ? e : it->second;
    }
    if (e->kind == ExprKind::Let) {
      for (std::size_t i = 0; i < e->binders.size(); ++i) {
        env[e->binder_slots[i]] = go(e->kids[i]);
      }
      return go(e->kids.back());
    }
    if (e->kids.empty()) return e;
    std::vector<ExprPtr> kids;
    kids.reserve(e->kids.size());
    for (const auto& k : e->kids) kids.push_back(go(k));
    return with_kids(*e, std::move(kids));
  };
  return go(root);
}

ExprPtr simplify(const ExprPtr& e) {
  if (e->kids.empty()) return e;
  std::vector<ExprPtr> kids;
  for (const auto& k : e->kids) kids.push_back(simplify(k));
  ExprPtr out = with_kids(*e, kids);

  if (out->kind == ExprKind::Binary) {
    const auto& a = out->kids[0];
    const auto& b = out->kids[1];
    switch (out->bop) {
      case dsl::BinaryOp::Add:
        if (is_number(b, 0.0)) return a;
        if (is_number(a, 0.0)) return b;
        break;
      case dsl::BinaryOp::Sub:
        if (is_number(b, 0.0)) return a;
        break;
      case dsl::BinaryOp::Mul:
        if (is_number(b, 1.0)) return a;
        if (is_number(a, 1.0)) return b;
        break;
      case dsl::BinaryOp::Div:
      case dsl::BinaryOp::Pow:
        if (is_number(b, 1.0)) return a;
        break;
    }
  }
  if (out->kind == ExprKind::Neg && out->kids[0]->kind == ExprKind::Neg) {
    return out->kids[0]->kids[0];
  }
  const bool foldable = out->kind == ExprKind::Binary || out->kind == ExprKind::Call ||
                        out->kind == ExprKind::Cond;
  if (foldable && variable_free(*out)) {
    try {
      const auto program = dsl::parse("def heuristic(v): return " + dsl::expr_to_string(*out),
                                      dsl::HeuristicSignature::per_bidder());
      const double v = dsl::eval_scalar(program, 0.0);
      if (std::isfinite(v)) return number_expr(v);
    } catch (const std::exception&) {
      // leave it unfolded
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SymbolicProposer::Impl {
  dsl::HeuristicSignature sig;
  bool dist_fns = false;
  SymbolicOptions opt;
  std::string param;

  using Rng = std::mt19937_64;

  double uniform(Rng& rng) const { return dist::unit_uniform(rng); }
  std::size_t pick(Rng& rng, std::size_t n) const {
    return std::min(n - 1, static_cast<std::size_t>(uniform(rng) * static_cast<double>(n)));
  }

  ExprPtr var() const { return dsl::make_var(param); }

  ExprPtr constant(Rng& rng) const {
    static const double pool[] = {0.0, 0.1, 0.25, 0.5, 1.0, 2.0};
    if (uniform(rng) < 0.7) return dsl::make_number(pool[pick(rng, std::size(pool))]);
    return dsl::make_number(std::round(uniform(rng) * 100.0) / 100.0);
  }

  ExprPtr input_terminal(Rng& rng) const {
    if (!sig.vector_input()) return var();
    return dsl::make_index(var(), dsl::make_number(static_cast<double>(pick(rng, sig.arity))));
  }

  ExprPtr terminal(Rng& rng) const {
    return uniform(rng) < 0.65 ? input_terminal(rng) : constant(rng);
  }

  ExprPtr atom(Rng& rng) const {
    const double u = uniform(rng);
    if (sig.kind == dsl::SignatureKind::Redistribution && u < 0.35) {
      static const Builtin aggs[] = {Builtin::Min, Builtin::Max, Builtin::Mean, Builtin::Sum,
                                     Builtin::Median};
      return dsl::make_call(aggs[pick(rng, std::size(aggs))], {var()});
    }
    if (dist_fns && u < 0.35) {
      static const Builtin fns[] = {Builtin::Pdf, Builtin::Cdf, Builtin::Survival};
      return dsl::make_call(fns[pick(rng, std::size(fns))], {input_terminal(rng)});
    }
    return terminal(rng);
  }

  ExprPtr random_expr(Rng& rng, std::size_t depth) const {
    if (depth == 0 || uniform(rng) < 0.3) return atom(rng);
    const double u = uniform(rng);
    if (u < 0.7) {
      static const dsl::BinaryOp ops[] = {dsl::BinaryOp::Add, dsl::BinaryOp::Sub,
                                          dsl::BinaryOp::Mul, dsl::BinaryOp::Div};
      return dsl::make_binary(ops[pick(rng, std::size(ops))], random_expr(rng, depth - 1),
                              random_expr(rng, depth - 1));
    }
    if (u < 0.85) {
      const Builtin fn = uniform(rng) < 0.5 ? Builtin::Min : Builtin::Max;
      return dsl::make_call(fn, {random_expr(rng, depth - 1), random_expr(rng, depth - 1)});
    }
    static const Builtin unary[] = {Builtin::Sigmoid, Builtin::Exp, Builtin::Sqrt, Builtin::Abs};
    return dsl::make_call(unary[pick(rng, std::size(unary))], {random_expr(rng, depth - 1)});
  }

  // ramped depth so small trees stay common
  ExprPtr fresh(Rng& rng) const {
    const std::size_t depth = 1 + pick(rng, opt.max_depth);
    if (!sig.vector_output()) return random_expr(rng, depth);
    std::vector<ExprPtr> elems;
    for (std::size_t k = 0; k < sig.arity; ++k) {
      elems.push_back(random_expr(rng, std::max<std::size_t>(1, depth - 1)));
    }
    elems.push_back(uniform(rng) < 0.5 ? constant(rng) : random_expr(rng, 1));
    return dsl::make_vec(std::move(elems));
  }

  // -- tree addressing. Paths list child indices from the root.

  using Path = std::vector<std::size_t>;

  bool vector_valued(const Expr& e) const {
    switch (e.kind) {
      case ExprKind::Var: return e.slot == 0 && sig.vector_input();
      case ExprKind::VecLit: return true;
      case ExprKind::Call:
        if (e.fn == Builtin::Sorted) return true;
        if (dsl::is_elementwise(e.fn)) return vector_valued(*e.kids[0]);
        return false;
      case ExprKind::Binary: return vector_valued(*e.kids[0]) || vector_valued(*e.kids[1]);
      case ExprKind::Neg: return vector_valued(*e.kids[0]);
      case ExprKind::Cond: return vector_valued(*e.kids[1]) || vector_valued(*e.kids[2]);
      default: return false;
    }
  }

  // Scalar-valued nodes that may be replaced without breaking shapes.
  void collect(const ExprPtr& e, Path& at, std::vector<Path>& out, bool root_ok) const {
    const bool selectable = e->kind != ExprKind::Compare && !vector_valued(*e);
    if (selectable && (root_ok || !at.empty())) out.push_back(at);
    for (std::size_t i = 0; i < e->kids.size(); ++i) {
      if (e->kind == ExprKind::Index && i == 1) continue;
      at.push_back(i);
      collect(e->kids[i], at, out, root_ok);
      at.pop_back();
    }
  }

  std::vector<Path> slots(const ExprPtr& e, bool root_ok = true) const {
    std::vector<Path> out;
    Path at;
    collect(e, at, out, root_ok);
    return out;
  }

  static ExprPtr get(const ExprPtr& e, const Path& p, std::size_t i = 0) {
    return i == p.size() ? e : get(e->kids[p[i]], p, i + 1);
  }

  static ExprPtr put(const ExprPtr& e, const Path& p, const ExprPtr& value, std::size_t i = 0) {
    if (i == p.size()) return value;
    auto kids = e->kids;
    kids[p[i]] = put(kids[p[i]], p, value, i + 1);
    return with_kids(*e, std::move(kids));
  }

  // Root-level vector outputs are mutated one element at a time.
  bool elementwise_root(const ExprPtr& e) const {
    return sig.vector_output() && e->kind == ExprKind::VecLit;
  }

  ExprPtr crossover(Rng& rng, const ExprPtr& a, const ExprPtr& b) const {
    const auto to = slots(a, !elementwise_root(a));
    const auto from = slots(b, !elementwise_root(b));
    if (to.empty() || from.empty()) return a;
    return put(a, to[pick(rng, to.size())], get(b, from[pick(rng, from.size())]));
  }

  ExprPtr shrink(Rng& rng, const ExprPtr& e) const {
    const ExprPtr s = simplify(e);
    if (!dsl::structurally_equal(*s, *e)) return s;
    std::vector<Path> candidates;
    for (const auto& p : slots(e, !elementwise_root(e))) {
      const auto node = get(e, p);
      if (node->kind == ExprKind::Binary || node->kind == ExprKind::Call ||
          node->kind == ExprKind::Neg) {
        candidates.push_back(p);
      }
    }
    if (candidates.empty()) return e;
    const Path p = candidates[pick(rng, candidates.size())];
    const auto node = get(e, p);
    auto kids = slots(node, false);
    // hoist a direct scalar child
    std::vector<Path> direct;
    for (auto& k : kids) {
      if (k.size() == 1) direct.push_back(k);
    }
    if (direct.empty()) return put(e, p, input_terminal(rng));
    return put(e, p, get(node, direct[pick(rng, direct.size())]));
  }

  ExprPtr point_mutation(Rng& rng, const ExprPtr& e) const {
    std::vector<Path> numbers;
    std::vector<Path> binaries;
    for (const auto& p : slots(e, !elementwise_root(e))) {
      const auto node = get(e, p);
      if (node->kind == ExprKind::Number) numbers.push_back(p);
      if (node->kind == ExprKind::Binary) binaries.push_back(p);
    }
    if (uniform(rng) < 0.15) {
      const auto all = slots(e, !elementwise_root(e));
      if (!all.empty()) {
        const Path p = all[pick(rng, all.size())];
        return put(e, p, dsl::make_binary(dsl::BinaryOp::Mul, constant(rng), get(e, p)));
      }
    }
    const bool jitter = !numbers.empty() && (binaries.empty() || uniform(rng) < 0.5);
    if (jitter) {
      const Path p = numbers[pick(rng, numbers.size())];
      const double old = get(e, p)->value;
      const double u = uniform(rng);
      double v = old;
      if (u < 0.2) {
        v = round_sig(old, 1 + static_cast<int>(pick(rng, 2)));  // snap
      }
      if (v == old) {
        const double scale = u < 0.6 ? opt.jitter : 5.0 * opt.jitter;
        const double factor = std::exp((2.0 * uniform(rng) - 1.0) * std::log1p(scale));
        v = round_sig(old * factor);
        if (old == 0.0) v = round_sig((2.0 * uniform(rng) - 1.0) * scale);
      }
      if (v == old) v = round_sig(old * (1.0 + opt.jitter / 2));
      return put(e, p, number_expr(v));
    }
    if (!binaries.empty()) {
      const Path p = binaries[pick(rng, binaries.size())];
      const auto node = get(e, p);
      if (uniform(rng) < 0.25) {
        return put(e, p, dsl::make_binary(node->bop, node->kids[1], node->kids[0]));
      }
      static const dsl::BinaryOp ops[] = {dsl::BinaryOp::Add, dsl::BinaryOp::Sub,
                                          dsl::BinaryOp::Mul, dsl::BinaryOp::Div};
      dsl::BinaryOp op = node->bop;
      while (op == node->bop) op = ops[pick(rng, std::size(ops))];
      return put(e, p, dsl::make_binary(op, node->kids[0], node->kids[1]));
    }
    // nothing to tweak: scale a random leaf
    const auto all = slots(e, !elementwise_root(e));
    if (all.empty()) return e;
    const Path p = all[pick(rng, all.size())];
    return put(e, p, dsl::make_binary(dsl::BinaryOp::Mul, constant(rng), get(e, p)));
  }

  ExprPtr delete_subtree(Rng& rng, const ExprPtr& e) const {
    auto all = slots(e, false);
    if (elementwise_root(e)) {
      std::erase_if(all, [](const Path& p) { return p.size() < 2; });
    }
    if (all.empty()) return e;
    // deeper nodes are smaller, so weight by depth
    std::vector<double> cum;
    double total = 0.0;
    for (const auto& p : all) cum.push_back(total += static_cast<double>(p.size()));
    const double u = uniform(rng) * total;
    const std::size_t i = std::min<std::size_t>(
        all.size() - 1, static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()));
    return put(e, all[i], terminal(rng));
  }

  ExprPtr apply(int op, Rng& rng, const std::vector<ExprPtr>& parents) const {
    const ExprPtr& a = parents[pick(rng, parents.size())];
    switch (op) {
      case 1: return fresh(rng);
      case 2: {
        const ExprPtr& first = parents.front();
        const ExprPtr& second = parents.size() > 1 ? parents[1 + pick(rng, parents.size() - 1)]
                                                   : parents.front();
        return uniform(rng) < 0.5 ? crossover(rng, first, second) : crossover(rng, second, first);
      }
      case 3: return shrink(rng, a);
      case 4: return point_mutation(rng, a);
      default: return delete_subtree(rng, a);
    }
  }

  std::optional<std::string> render(const ExprPtr& e) const {
    const std::string text = dsl::pretty_print(param, *e);
    try {
      dsl::parse(text, sig);
      return text;
    } catch (const dsl::ParseError&) {
      return std::nullopt;
    }
  }
};

SymbolicProposer::SymbolicProposer(dsl::HeuristicSignature signature, bool distribution_builtins,
                                   SymbolicOptions options)
    : signature_(signature), distribution_builtins_(distribution_builtins), options_(options) {
  auto impl = std::make_shared<Impl>();
  impl->sig = signature_;
  impl->dist_fns = distribution_builtins_;
  impl->opt = options_;
  impl->param = std::string(signature_.default_param());
  impl_ = std::move(impl);
}

Proposal SymbolicProposer::propose(const ProposalRequest& request, std::uint64_t seed) {
  const Impl& im = *impl_;
  std::mt19937_64 rng(seed);

  std::vector<ExprPtr> parents;
  for (const auto& p : request.parents) {
    try {
      auto program = dsl::parse(p.source, signature_);
      auto body = inline_lets(program.body());
      if (program.param() != im.param) body = rename_param(body, im.param);
      parents.push_back(body);
    } catch (const dsl::ParseError&) {
      // unusable parent; skip
    }
  }

  int op = request.strategy_id.value_or(0);
  for (std::size_t attempt = 0; attempt < options_.max_attempts; ++attempt) {
    if (!request.strategy_id || (attempt > 0 && attempt % 8 == 0)) {
      op = 1 + static_cast<int>(im.pick(rng, kStrategyCount));
    }
    if (parents.empty()) op = 1;
    ExprPtr child = im.apply(op, rng, parents);
    if (dsl::structural_size(*child) > options_.max_size) child = simplify(child);
    if (dsl::structural_size(*child) > options_.max_size) continue;
    if (auto text = im.render(child)) return Proposal::accept(*text);
  }
  // fall back to a fresh atom, which always parses
  if (auto text = im.render(im.atom(rng))) return Proposal::accept(*text);
  return Proposal::accept(dsl::pretty_print(im.param, *dsl::make_number(0.0)));
}

}  // namespace amd::prop
