#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "mkfuse/frontend.hpp"

namespace mkfuse {

namespace {

constexpr int kDefaultMaxThreadsPerSm = 2048;

enum class Ty { Int, Float };

Ty from_scalar(ScalarType t) { return t == ScalarType::Int32 ? Ty::Int : Ty::Float; }

struct Symbol {
  enum class Kind { ScalarLocal, ScalarParam, ArrayParam, SharedArray } kind;
  Ty type;  // element type for arrays
};

class Checker {
 public:
  Checker(const Program& program) : program_(program) {}

  void run() {
    check_top_level_names();
    check_recursion();
    for (const auto& fn : program_.functions) check_function(fn);
    for (const auto& kernel : program_.kernels) check_kernel(kernel);
  }

 private:
  const Program& program_;
  std::vector<std::map<std::string, Symbol>> scopes_;
  const FuncDef* current_fn_ = nullptr;
  const Kernel* current_kernel_ = nullptr;

  void check_top_level_names() {
    std::set<std::string> names;
    auto add = [&](const std::string& name, SourcePos pos) {
      if (!names.insert(name).second)
        fail(ErrCode::DuplicateName, "top-level name '" + name + "' is not unique", pos);
    };
    for (const auto& fn : program_.functions) add(fn.name, fn.pos);
    for (const auto& k : program_.kernels) add(k.name, k.pos);
  }

  // Call-graph cycle detection over device functions (DFS with path).
  void check_recursion() {
    std::map<std::string, std::vector<std::string>> calls;
    for (const auto& fn : program_.functions) {
      auto& out = calls[fn.name];
      for_each_stmt(fn.body, [&](const Stmt& stmt) {
        if (const auto* call = std::get_if<CallStmt>(&stmt.node)) out.push_back(call->callee);
        for_each_expr_shallow(stmt, [&](const Expr& e) {
          for_each_subexpr(e, [&](const Expr& sub) {
            if (const auto* c = std::get_if<CallExpr>(&sub.node)) out.push_back(c->callee);
          });
        });
      });
    }
    std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
    std::vector<std::string> path;
    std::function<void(const std::string&)> dfs = [&](const std::string& name) {
      state[name] = 1;
      path.push_back(name);
      for (const auto& callee : calls[name]) {
        if (!program_.find_function(callee)) continue;  // reported at use site later
        if (state[callee] == 1) {
          std::string cycle;
          auto it = std::find(path.begin(), path.end(), callee);
          for (; it != path.end(); ++it) cycle += (cycle.empty() ? "" : ", ") + *it;
          fail(ErrCode::Recursion, "recursive call cycle: [" + cycle + "]");
        }
        if (state[callee] == 0) dfs(callee);
      }
      path.pop_back();
      state[name] = 2;
    };
    for (const auto& fn : program_.functions)
      if (state[fn.name] == 0) dfs(fn.name);
  }

  // ---- scope helpers -----------------------------------------------------

  void push_scope() { scopes_.emplace_back(); }
  void pop_scope() { scopes_.pop_back(); }

  void declare(const std::string& name, Symbol sym, SourcePos pos) {
    if (!scopes_.back().emplace(name, sym).second)
      fail(ErrCode::DuplicateName, "'" + name + "' is already declared in this scope", pos);
  }

  const Symbol* lookup(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return &found->second;
    }
    return nullptr;
  }

  const Symbol& require(const std::string& name, SourcePos pos) const {
    const Symbol* sym = lookup(name);
    if (!sym) fail(ErrCode::UnknownIdentifier, "unknown identifier '" + name + "'", pos);
    return *sym;
  }

  // ---- labels ------------------------------------------------------------

  void check_labels(const StmtBlock& body) {
    std::set<std::string> labels;
    for_each_stmt(body, [&](const Stmt& stmt) {
      if (const auto* label = std::get_if<LabelStmt>(&stmt.node)) {
        if (!labels.insert(label->name).second)
          fail(ErrCode::DuplicateName, "duplicate label '" + label->name + "'", stmt.pos);
      }
    });
    for_each_stmt(body, [&](const Stmt& stmt) {
      if (const auto* g = std::get_if<GotoStmt>(&stmt.node)) {
        if (!labels.count(g->label))
          fail(ErrCode::UnresolvedLabel, "goto targets unknown label '" + g->label + "'",
               stmt.pos);
      }
    });
  }

  // ---- typing ------------------------------------------------------------

  Ty type_of(const Expr& expr) {
    return std::visit(
        [&](const auto& node) -> Ty {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IntLit>) {
            return Ty::Int;
          } else if constexpr (std::is_same_v<T, FloatLit>) {
            return Ty::Float;
          } else if constexpr (std::is_same_v<T, VarRef>) {
            const Symbol& sym = require(node.name, expr.pos);
            if (sym.kind == Symbol::Kind::ArrayParam || sym.kind == Symbol::Kind::SharedArray)
              fail(ErrCode::TypeMismatch, "array '" + node.name + "' used as a scalar",
                   expr.pos);
            return sym.type;
          } else if constexpr (std::is_same_v<T, BuiltinRef>) {
            return Ty::Int;
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            Ty t = type_of(*node.operand);
            if (node.op == UnaryOp::LogNot && t != Ty::Int)
              fail(ErrCode::TypeMismatch, "'!' needs an int operand", expr.pos);
            return t;
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            return type_of_binary(node, expr.pos);
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            const Symbol& sym = require(node.array, expr.pos);
            if (sym.kind != Symbol::Kind::ArrayParam && sym.kind != Symbol::Kind::SharedArray)
              fail(ErrCode::TypeMismatch, "'" + node.array + "' is not an array", expr.pos);
            if (type_of(*node.index) != Ty::Int)
              fail(ErrCode::TypeMismatch, "array index must be int", node.index->pos);
            return sym.type;
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            return type_of_intrinsic(node, expr.pos);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            return type_of(*node.value);
          } else {
            static_assert(std::is_same_v<T, CallExpr>);
            const FuncDef* fn = program_.find_function(node.callee);
            if (!fn)
              fail(ErrCode::UnresolvedCall, "call to unknown function '" + node.callee + "'",
                   expr.pos);
            check_call_args(*fn, node.args, expr.pos);
            if (!fn->return_type)
              fail(ErrCode::TypeMismatch,
                   "void function '" + node.callee + "' used in an expression", expr.pos);
            return from_scalar(*fn->return_type);
          }
        },
        expr.node);
  }

  Ty type_of_binary(const BinaryExpr& bin, SourcePos pos) {
    Ty l = type_of(*bin.lhs);
    Ty r = type_of(*bin.rhs);
    switch (bin.op) {
      case BinaryOp::Add:
      case BinaryOp::Sub:
      case BinaryOp::Mul:
      case BinaryOp::Div:
        return (l == Ty::Float || r == Ty::Float) ? Ty::Float : Ty::Int;
      case BinaryOp::Mod:
      case BinaryOp::Shl:
      case BinaryOp::Shr:
      case BinaryOp::BitAnd:
      case BinaryOp::BitXor:
      case BinaryOp::BitOr:
      case BinaryOp::LogAnd:
      case BinaryOp::LogOr:
        if (l != Ty::Int || r != Ty::Int)
          fail(ErrCode::TypeMismatch, "operator needs int operands", pos);
        return Ty::Int;
      default:  // comparisons
        return Ty::Int;
    }
  }

  Ty type_of_intrinsic(const IntrinsicCall& call, SourcePos pos) {
    switch (call.which) {
      case Intrinsic::CastInt:
        type_of(call.args[0]);
        return Ty::Int;
      case Intrinsic::CastFloat:
        type_of(call.args[0]);
        return Ty::Float;
      case Intrinsic::Fmaxf:
        type_of(call.args[0]);
        type_of(call.args[1]);
        return Ty::Float;
      default: {  // Min / Max
        Ty a = type_of(call.args[0]);
        Ty b = type_of(call.args[1]);
        (void)pos;
        return (a == Ty::Float || b == Ty::Float) ? Ty::Float : Ty::Int;
      }
    }
  }

  void check_call_args(const FuncDef& fn, const std::vector<Expr>& args, SourcePos pos) {
    if (args.size() != fn.params.size())
      fail(ErrCode::TypeMismatch,
           "'" + fn.name + "' expects " + std::to_string(fn.params.size()) + " arguments",
           pos);
    for (size_t i = 0; i < args.size(); ++i) {
      const Param& formal = fn.params[i];
      if (is_array_param(formal.kind)) {
        // array arguments must be bare array names of the matching element type
        const auto* ref = std::get_if<VarRef>(&args[i].node);
        const auto* idx = std::get_if<IndexExpr>(&args[i].node);
        std::string name = ref ? ref->name : idx ? idx->array : "";
        const Symbol* sym = ref ? lookup(ref->name) : nullptr;
        if (!ref || !sym ||
            (sym->kind != Symbol::Kind::ArrayParam && sym->kind != Symbol::Kind::SharedArray))
          fail(ErrCode::TypeMismatch,
               "argument " + std::to_string(i + 1) + " of '" + fn.name +
                   "' must be an array name",
               args[i].pos);
        if (sym->type != from_scalar(param_elem_type(formal.kind)))
          fail(ErrCode::TypeMismatch, "array element type mismatch in call to '" + fn.name + "'",
               args[i].pos);
      } else {
        Ty actual = type_of(args[i]);
        Ty expected = from_scalar(param_elem_type(formal.kind));
        if (actual == Ty::Float && expected == Ty::Int)
          fail(ErrCode::TypeMismatch,
               "cannot pass float where int is expected in call to '" + fn.name + "'",
               args[i].pos);
      }
    }
  }

  void check_assignable(Ty target, Ty value, SourcePos pos) {
    if (target == Ty::Int && value == Ty::Float)
      fail(ErrCode::TypeMismatch, "cannot assign float to int without int() cast", pos);
  }

  Ty lvalue_type(const LValue& lv, bool* is_array_elem = nullptr) {
    const Symbol& sym = require(lv.name, lv.pos);
    bool array = sym.kind == Symbol::Kind::ArrayParam || sym.kind == Symbol::Kind::SharedArray;
    if (is_array_elem) *is_array_elem = array && static_cast<bool>(lv.index);
    if (array) {
      if (!lv.index)
        fail(ErrCode::TypeMismatch, "array '" + lv.name + "' used as a scalar", lv.pos);
      if (type_of(*lv.index) != Ty::Int)
        fail(ErrCode::TypeMismatch, "array index must be int", lv.index->pos);
    } else if (lv.index) {
      fail(ErrCode::TypeMismatch, "'" + lv.name + "' is not an array", lv.pos);
    }
    return sym.type;
  }

  // ---- statements --------------------------------------------------------

  void check_block(const StmtBlock& block) {
    push_scope();
    for (const auto& stmt : block.stmts) check_stmt(stmt);
    pop_scope();
  }

  void check_stmt(const Stmt& stmt) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            if (node.init) {
              Ty init_ty = type_of(*node.init);
              check_assignable(from_scalar(node.type), init_ty, stmt.pos);
            }
            declare(node.name, Symbol{Symbol::Kind::ScalarLocal, from_scalar(node.type)},
                    stmt.pos);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            Ty target = lvalue_type(node.target);
            Ty value = type_of(*node.value);
            check_assignable(target, value, stmt.pos);
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            if (type_of(*node.cond) != Ty::Int)
              fail(ErrCode::TypeMismatch, "condition must be int", node.cond->pos);
            check_block(node.then_body);
            if (node.else_body) check_block(*node.else_body);
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            push_scope();  // loop-header declarations scope over cond/step/body
            check_stmt(*node.init);
            if (type_of(*node.cond) != Ty::Int)
              fail(ErrCode::TypeMismatch, "condition must be int", node.cond->pos);
            check_stmt(*node.step);
            check_block(node.body);
            pop_scope();
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            if (type_of(*node.cond) != Ty::Int)
              fail(ErrCode::TypeMismatch, "condition must be int", node.cond->pos);
            check_block(node.body);
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            bool is_array_elem = false;
            Ty target = lvalue_type(node.target, &is_array_elem);
            if (!is_array_elem)
              fail(ErrCode::TypeMismatch, "atomic_add target must be an array element",
                   stmt.pos);
            check_assignable(target, type_of(*node.value), stmt.pos);
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            check_return(node, stmt.pos);
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            const FuncDef* fn = program_.find_function(node.callee);
            if (!fn)
              fail(ErrCode::UnresolvedCall, "call to unknown function '" + node.callee + "'",
                   stmt.pos);
            check_call_args(*fn, node.args, stmt.pos);
          }
          // Barrier/PartialBarrier/Label/Goto need no typing.
        },
        stmt.node);
  }

  void check_return(const ReturnStmt& ret, SourcePos pos) {
    if (current_kernel_ != nullptr) {
      if (ret.value)
        fail(ErrCode::TypeMismatch, "kernels cannot return a value", pos);
      return;
    }
    if (!current_fn_->return_type) {
      if (ret.value)
        fail(ErrCode::TypeMismatch, "void function cannot return a value", pos);
      return;
    }
    if (!ret.value)
      fail(ErrCode::TypeMismatch, "function '" + current_fn_->name + "' must return a value",
           pos);
    check_assignable(from_scalar(*current_fn_->return_type), type_of(*ret.value), pos);
  }

  // ---- definitions -------------------------------------------------------

  void declare_params(const std::vector<Param>& params) {
    for (const auto& p : params) {
      Symbol sym;
      sym.kind = is_array_param(p.kind) ? Symbol::Kind::ArrayParam : Symbol::Kind::ScalarParam;
      sym.type = from_scalar(param_elem_type(p.kind));
      declare(p.name, sym, p.pos);
    }
  }

  void check_function(const FuncDef& fn) {
    current_fn_ = &fn;
    current_kernel_ = nullptr;
    push_scope();
    declare_params(fn.params);
    check_labels(fn.body);
    check_block(fn.body);
    pop_scope();
    current_fn_ = nullptr;
  }

  void check_kernel(const Kernel& kernel) {
    if (kernel.block_dims.x <= 0 || kernel.block_dims.y <= 0 || kernel.block_dims.z <= 0)
      fail(ErrCode::InvalidArgument, "block dimensions must be positive", kernel.pos);
    if (kernel.block_dims.count() > kDefaultMaxThreadsPerSm)
      fail(ErrCode::ThreadBudgetExceeded,
           "block dimension product " + std::to_string(kernel.block_dims.count()) +
               " exceeds " + std::to_string(kDefaultMaxThreadsPerSm),
           kernel.pos);
    current_kernel_ = &kernel;
    current_fn_ = nullptr;
    push_scope();
    declare_params(kernel.params);
    for (const auto& sh : kernel.shared_decls)
      declare(sh.name, Symbol{Symbol::Kind::SharedArray, from_scalar(sh.elem_type)}, sh.pos);
    check_labels(kernel.body);
    check_block(kernel.body);
    pop_scope();
    current_kernel_ = nullptr;
  }
};

}  // namespace

void validate_program(const Program& program) { Checker(program).run(); }

std::vector<LintWarning> lint_program(const Program& program) {
  std::vector<LintWarning> warnings;
  auto lint_body = [&](const StmtBlock& body, const std::string& owner) {
    // Pre-order index per statement; a forward goto crossing a declaration
    // would skip its initialization in emitted goto-style code.
    std::vector<const Stmt*> order;
    for_each_stmt(body, [&](const Stmt& s) { order.push_back(&s); });
    std::map<std::string, size_t> label_index;
    for (size_t i = 0; i < order.size(); ++i)
      if (const auto* label = std::get_if<LabelStmt>(&order[i]->node))
        label_index[label->name] = i;
    for (size_t i = 0; i < order.size(); ++i) {
      const auto* g = std::get_if<GotoStmt>(&order[i]->node);
      if (!g) continue;
      auto it = label_index.find(g->label);
      if (it == label_index.end() || it->second <= i) continue;
      for (size_t j = i + 1; j < it->second; ++j) {
        if (std::get_if<DeclStmt>(&order[j]->node)) {
          warnings.push_back(LintWarning{
              order[i]->pos, "goto '" + g->label + "' in " + owner +
                                 " jumps over a declaration (lift declarations first)"});
          break;
        }
      }
    }
  };
  for (const auto& fn : program.functions) lint_body(fn.body, "function '" + fn.name + "'");
  for (const auto& k : program.kernels) lint_body(k.body, "kernel '" + k.name + "'");
  return warnings;
}

}  // namespace mkfuse
