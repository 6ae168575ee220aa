#include "mkfuse/ast.hpp"

#include <cstring>

namespace mkfuse {

const char* to_string(ScalarType t) {
  return t == ScalarType::Int32 ? "int" : "float";
}

bool is_array_param(ParamKind k) {
  return k == ParamKind::ArrayInt || k == ParamKind::ArrayFloat;
}

ScalarType param_elem_type(ParamKind k) {
  return (k == ParamKind::ScalarInt || k == ParamKind::ArrayInt) ? ScalarType::Int32
                                                                 : ScalarType::Float32;
}

const FuncDef* Program::find_function(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const Kernel* Program::find_kernel(const std::string& name) const {
  for (const auto& k : kernels)
    if (k.name == name) return &k;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Structural equality
// ---------------------------------------------------------------------------

namespace {

bool eq_opt_expr(const box<Expr>& a, const box<Expr>& b) {
  if (static_cast<bool>(a) != static_cast<bool>(b)) return false;
  return !a || ast_equal(*a, *b);
}

bool eq_lvalue(const LValue& a, const LValue& b) {
  return a.name == b.name && eq_opt_expr(a.index, b.index);
}

bool eq_exprs(const std::vector<Expr>& a, const std::vector<Expr>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!ast_equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

bool ast_equal(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& na) -> bool {
        using T = std::decay_t<decltype(na)>;
        const auto& nb = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, IntLit>) {
          return na.value == nb.value;
        } else if constexpr (std::is_same_v<T, FloatLit>) {
          // bitwise so that -0.0f != 0.0f and NaN literals stay stable
          return std::memcmp(&na.value, &nb.value, sizeof(float)) == 0;
        } else if constexpr (std::is_same_v<T, VarRef>) {
          return na.name == nb.name;
        } else if constexpr (std::is_same_v<T, BuiltinRef>) {
          return na.builtin == nb.builtin;
        } else if constexpr (std::is_same_v<T, UnaryExpr>) {
          return na.op == nb.op && ast_equal(*na.operand, *nb.operand);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          return na.op == nb.op && ast_equal(*na.lhs, *nb.lhs) && ast_equal(*na.rhs, *nb.rhs);
        } else if constexpr (std::is_same_v<T, IndexExpr>) {
          return na.array == nb.array && ast_equal(*na.index, *nb.index);
        } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
          return na.which == nb.which && eq_exprs(na.args, nb.args);
        } else if constexpr (std::is_same_v<T, ShuffleXor>) {
          return na.lane_mask == nb.lane_mask && ast_equal(*na.value, *nb.value);
        } else {
          static_assert(std::is_same_v<T, CallExpr>);
          return na.callee == nb.callee && eq_exprs(na.args, nb.args);
        }
      },
      a.node);
}

bool ast_equal(const Stmt& a, const Stmt& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& na) -> bool {
        using T = std::decay_t<decltype(na)>;
        const auto& nb = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, DeclStmt>) {
          return na.type == nb.type && na.name == nb.name && eq_opt_expr(na.init, nb.init);
        } else if constexpr (std::is_same_v<T, AssignStmt>) {
          return eq_lvalue(na.target, nb.target) && ast_equal(*na.value, *nb.value);
        } else if constexpr (std::is_same_v<T, IfStmt>) {
          if (!ast_equal(*na.cond, *nb.cond)) return false;
          if (!ast_equal(na.then_body, nb.then_body)) return false;
          if (na.else_body.has_value() != nb.else_body.has_value()) return false;
          return !na.else_body || ast_equal(*na.else_body, *nb.else_body);
        } else if constexpr (std::is_same_v<T, ForStmt>) {
          return ast_equal(*na.init, *nb.init) && ast_equal(*na.cond, *nb.cond) &&
                 ast_equal(*na.step, *nb.step) && ast_equal(na.body, nb.body);
        } else if constexpr (std::is_same_v<T, WhileStmt>) {
          return ast_equal(*na.cond, *nb.cond) && ast_equal(na.body, nb.body);
        } else if constexpr (std::is_same_v<T, BarrierStmt>) {
          return true;
        } else if constexpr (std::is_same_v<T, PartialBarrierStmt>) {
          return na.id == nb.id && na.count == nb.count;
        } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
          return eq_lvalue(na.target, nb.target) && ast_equal(*na.value, *nb.value);
        } else if constexpr (std::is_same_v<T, ReturnStmt>) {
          return eq_opt_expr(na.value, nb.value);
        } else if constexpr (std::is_same_v<T, CallStmt>) {
          return na.callee == nb.callee && eq_exprs(na.args, nb.args);
        } else if constexpr (std::is_same_v<T, LabelStmt>) {
          return na.name == nb.name;
        } else {
          static_assert(std::is_same_v<T, GotoStmt>);
          return na.label == nb.label;
        }
      },
      a.node);
}

bool ast_equal(const StmtBlock& a, const StmtBlock& b) {
  if (a.stmts.size() != b.stmts.size()) return false;
  for (size_t i = 0; i < a.stmts.size(); ++i)
    if (!ast_equal(a.stmts[i], b.stmts[i])) return false;
  return true;
}

bool ast_equal(const Kernel& a, const Kernel& b) {
  if (a.name != b.name || !(a.block_dims == b.block_dims) || a.tunable != b.tunable)
    return false;
  if (a.meta.grid_dim != b.meta.grid_dim || a.meta.regs != b.meta.regs) return false;
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].name != b.params[i].name || a.params[i].kind != b.params[i].kind)
      return false;
  if (a.shared_decls.size() != b.shared_decls.size()) return false;
  for (size_t i = 0; i < a.shared_decls.size(); ++i) {
    const auto& sa = a.shared_decls[i];
    const auto& sb = b.shared_decls[i];
    if (sa.name != sb.name || sa.elem_type != sb.elem_type || sa.length != sb.length)
      return false;
  }
  return ast_equal(a.body, b.body);
}

bool ast_equal(const Program& a, const Program& b) {
  if (a.functions.size() != b.functions.size() || a.kernels.size() != b.kernels.size())
    return false;
  for (size_t i = 0; i < a.functions.size(); ++i) {
    const auto& fa = a.functions[i];
    const auto& fb = b.functions[i];
    if (fa.name != fb.name || fa.return_type != fb.return_type) return false;
    if (fa.params.size() != fb.params.size()) return false;
    for (size_t j = 0; j < fa.params.size(); ++j)
      if (fa.params[j].name != fb.params[j].name || fa.params[j].kind != fb.params[j].kind)
        return false;
    if (!ast_equal(fa.body, fb.body)) return false;
  }
  for (size_t i = 0; i < a.kernels.size(); ++i)
    if (!ast_equal(a.kernels[i], b.kernels[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

Expr make_int(int32_t v) { return Expr{{}, IntLit{v}}; }
Expr make_float(float v) { return Expr{{}, FloatLit{v}}; }
Expr make_var(std::string name) { return Expr{{}, VarRef{std::move(name)}}; }
Expr make_builtin(BuiltinVar b) { return Expr{{}, BuiltinRef{b}}; }

Expr make_unary(UnaryOp op, Expr operand) {
  return Expr{{}, UnaryExpr{op, box<Expr>(std::move(operand))}};
}

Expr make_binary(BinaryOp op, Expr lhs, Expr rhs) {
  return Expr{{}, BinaryExpr{op, box<Expr>(std::move(lhs)), box<Expr>(std::move(rhs))}};
}

Expr make_index(std::string array, Expr index) {
  return Expr{{}, IndexExpr{std::move(array), box<Expr>(std::move(index))}};
}

Stmt make_decl(ScalarType t, std::string name) {
  return Stmt{{}, DeclStmt{t, std::move(name), {}}};
}

Stmt make_decl_init(ScalarType t, std::string name, Expr init) {
  return Stmt{{}, DeclStmt{t, std::move(name), box<Expr>(std::move(init))}};
}

Stmt make_assign(std::string name, Expr value) {
  return Stmt{{}, AssignStmt{LValue{{}, std::move(name), {}}, box<Expr>(std::move(value))}};
}

Stmt make_assign_index(std::string array, Expr index, Expr value) {
  return Stmt{{}, AssignStmt{LValue{{}, std::move(array), box<Expr>(std::move(index))},
                             box<Expr>(std::move(value))}};
}

Stmt make_if(Expr cond, StmtBlock then_body) {
  return Stmt{{}, IfStmt{box<Expr>(std::move(cond)), std::move(then_body), std::nullopt}};
}

Stmt make_if_else(Expr cond, StmtBlock then_body, StmtBlock else_body) {
  return Stmt{{}, IfStmt{box<Expr>(std::move(cond)), std::move(then_body),
                         std::move(else_body)}};
}

// ---------------------------------------------------------------------------
// Walkers
// ---------------------------------------------------------------------------

namespace {

template <typename Block, typename Fn>
void walk_stmts(Block&& block, const Fn& fn) {
  for (auto&& stmt : block.stmts) {
    fn(stmt);
    std::visit(
        [&](auto&& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IfStmt>) {
            walk_stmts(node.then_body, fn);
            if (node.else_body) walk_stmts(*node.else_body, fn);
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            fn(*node.init);
            fn(*node.step);
            walk_stmts(node.body, fn);
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            walk_stmts(node.body, fn);
          }
        },
        stmt.node);
  }
}

template <typename S, typename Fn>
void visit_stmt_exprs(S&& stmt, const Fn& fn) {
  std::visit(
      [&](auto&& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, DeclStmt>) {
          if (node.init) fn(*node.init);
        } else if constexpr (std::is_same_v<T, AssignStmt>) {
          if (node.target.index) fn(*node.target.index);
          fn(*node.value);
        } else if constexpr (std::is_same_v<T, IfStmt>) {
          fn(*node.cond);
        } else if constexpr (std::is_same_v<T, ForStmt>) {
          fn(*node.cond);
        } else if constexpr (std::is_same_v<T, WhileStmt>) {
          fn(*node.cond);
        } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
          if (node.target.index) fn(*node.target.index);
          fn(*node.value);
        } else if constexpr (std::is_same_v<T, ReturnStmt>) {
          if (node.value) fn(*node.value);
        } else if constexpr (std::is_same_v<T, CallStmt>) {
          for (auto&& a : node.args) fn(a);
        }
      },
      stmt.node);
}

template <typename E, typename Fn>
void walk_expr(E&& expr, const Fn& fn) {
  fn(expr);
  std::visit(
      [&](auto&& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, UnaryExpr>) {
          walk_expr(*node.operand, fn);
        } else if constexpr (std::is_same_v<T, BinaryExpr>) {
          walk_expr(*node.lhs, fn);
          walk_expr(*node.rhs, fn);
        } else if constexpr (std::is_same_v<T, IndexExpr>) {
          walk_expr(*node.index, fn);
        } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
          for (auto&& a : node.args) walk_expr(a, fn);
        } else if constexpr (std::is_same_v<T, ShuffleXor>) {
          walk_expr(*node.value, fn);
        } else if constexpr (std::is_same_v<T, CallExpr>) {
          for (auto&& a : node.args) walk_expr(a, fn);
        }
      },
      expr.node);
}

}  // namespace

void for_each_stmt(const StmtBlock& block, const std::function<void(const Stmt&)>& fn) {
  walk_stmts(block, fn);
}

void for_each_stmt(StmtBlock& block, const std::function<void(Stmt&)>& fn) {
  walk_stmts(block, fn);
}

void for_each_expr_shallow(const Stmt& stmt, const std::function<void(const Expr&)>& fn) {
  visit_stmt_exprs(stmt, fn);
}

void for_each_expr_shallow(Stmt& stmt, const std::function<void(Expr&)>& fn) {
  visit_stmt_exprs(stmt, fn);
}

void for_each_subexpr(const Expr& expr, const std::function<void(const Expr&)>& fn) {
  walk_expr(expr, fn);
}

void for_each_subexpr(Expr& expr, const std::function<void(Expr&)>& fn) {
  walk_expr(expr, fn);
}

}  // namespace mkfuse
