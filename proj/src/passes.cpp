#include <functional>
#include <map>
#include <set>

#include "mkfuse/frontend.hpp"

namespace mkfuse {

namespace {

// ---------------------------------------------------------------------------
// Scope-aware identifier rewriting shared by the passes.
// ---------------------------------------------------------------------------

struct ScopedRewrite {
  // Returns the replacement name for a declaration site.
  std::function<std::string(const std::string&)> on_decl;
  // Rewrites names not bound by any local declaration (params, shared
  // arrays, inlined formals).
  std::function<std::string(const std::string&)> on_free;
  // Pure rename applied to labels and goto targets.
  std::function<std::string(const std::string&)> on_label;

  std::vector<std::map<std::string, std::string>> scopes;

  std::string resolve(const std::string& name) {
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return found->second;
    }
    return on_free ? on_free(name) : name;
  }

  void expr(Expr& e) {
    std::visit(
        [&](auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, VarRef>) {
            node.name = resolve(node.name);
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            expr(*node.operand);
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            expr(*node.lhs);
            expr(*node.rhs);
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            node.array = resolve(node.array);
            expr(*node.index);
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            for (auto& a : node.args) expr(a);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            expr(*node.value);
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            for (auto& a : node.args) expr(a);
          }
        },
        e.node);
  }

  void lvalue(LValue& lv) {
    lv.name = resolve(lv.name);
    if (lv.index) expr(*lv.index);
  }

  void stmt(Stmt& s) {
    std::visit(
        [&](auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            if (node.init) expr(*node.init);  // initializer sees the outer binding
            std::string fresh = on_decl ? on_decl(node.name) : node.name;
            scopes.back()[node.name] = fresh;
            node.name = fresh;
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            lvalue(node.target);
            expr(*node.value);
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            expr(*node.cond);
            block(node.then_body);
            if (node.else_body) block(*node.else_body);
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            scopes.emplace_back();
            stmt(*node.init);
            expr(*node.cond);
            stmt(*node.step);
            block(node.body);
            scopes.pop_back();
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            expr(*node.cond);
            block(node.body);
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            lvalue(node.target);
            expr(*node.value);
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            if (node.value) expr(*node.value);
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            for (auto& a : node.args) expr(a);
          } else if constexpr (std::is_same_v<T, LabelStmt>) {
            if (on_label) node.name = on_label(node.name);
          } else if constexpr (std::is_same_v<T, GotoStmt>) {
            if (on_label) node.label = on_label(node.label);
          }
        },
        s.node);
  }

  void block(StmtBlock& b) {
    scopes.emplace_back();
    for (auto& s : b.stmts) stmt(s);
    scopes.pop_back();
  }
};

bool contains_calls(const StmtBlock& body) {
  bool found = false;
  for_each_stmt(body, [&](const Stmt& s) {
    if (std::get_if<CallStmt>(&s.node)) found = true;
    for_each_expr_shallow(s, [&](const Expr& e) {
      for_each_subexpr(e, [&](const Expr& sub) {
        if (std::get_if<CallExpr>(&sub.node)) found = true;
      });
    });
  });
  return found;
}

bool expr_has_call(const Expr& e) {
  bool found = false;
  for_each_subexpr(e, [&](const Expr& sub) {
    if (std::get_if<CallExpr>(&sub.node)) found = true;
  });
  return found;
}

// ---------------------------------------------------------------------------
// inline_calls
// ---------------------------------------------------------------------------

class Inliner {
 public:
  Inliner(const std::vector<FuncDef>& funcs) {
    for (const auto& f : funcs) funcs_[f.name] = &f;
    check_cycles(funcs);
  }

  StmtBlock transform_block(const StmtBlock& block) {
    StmtBlock out;
    for (const auto& stmt : block.stmts) transform_stmt(stmt, out.stmts);
    return out;
  }

 private:
  std::map<std::string, const FuncDef*> funcs_;
  int counter_ = 0;

  void check_cycles(const std::vector<FuncDef>& funcs) {
    std::map<std::string, std::vector<std::string>> edges;
    for (const auto& f : funcs) {
      auto& out = edges[f.name];
      for_each_stmt(f.body, [&](const Stmt& s) {
        if (const auto* call = std::get_if<CallStmt>(&s.node)) out.push_back(call->callee);
        for_each_expr_shallow(s, [&](const Expr& e) {
          for_each_subexpr(e, [&](const Expr& sub) {
            if (const auto* c = std::get_if<CallExpr>(&sub.node)) out.push_back(c->callee);
          });
        });
      });
    }
    std::map<std::string, int> state;
    std::vector<std::string> path;
    std::function<void(const std::string&)> dfs = [&](const std::string& name) {
      state[name] = 1;
      path.push_back(name);
      for (const auto& callee : edges[name]) {
        if (!funcs_.count(callee)) continue;
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
    for (const auto& f : funcs)
      if (state[f.name] == 0) dfs(f.name);
  }

  const FuncDef& require_fn(const std::string& name, SourcePos pos) {
    auto it = funcs_.find(name);
    if (it == funcs_.end())
      fail(ErrCode::UnresolvedCall, "call to unknown function '" + name + "'", pos);
    return *it->second;
  }

  /// Replaces every CallExpr in `e` (innermost first) with a temp variable,
  /// appending the inlined statements to `prelude`.
  void extract_calls(Expr& e, std::vector<Stmt>& prelude) {
    std::visit(
        [&](auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, UnaryExpr>) {
            extract_calls(*node.operand, prelude);
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            extract_calls(*node.lhs, prelude);
            extract_calls(*node.rhs, prelude);
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            extract_calls(*node.index, prelude);
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            for (auto& a : node.args) extract_calls(a, prelude);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            extract_calls(*node.value, prelude);
          }
        },
        e.node);
    if (auto* call = std::get_if<CallExpr>(&e.node)) {
      for (auto& a : call->args) extract_calls(a, prelude);
      const FuncDef& fn = require_fn(call->callee, e.pos);
      if (!fn.return_type)
        fail(ErrCode::TypeMismatch, "void function '" + call->callee + "' in expression",
             e.pos);
      std::string temp = expand_call(fn, call->args, prelude, /*want_result=*/true);
      e.node = VarRef{temp};
    }
  }

  /// Inlines one call, appending statements to `out`. Returns the result
  /// temp name when want_result.
  std::string expand_call(const FuncDef& fn, const std::vector<Expr>& args,
                          std::vector<Stmt>& out, bool want_result) {
    std::string suffix = "__inl" + std::to_string(counter_++);
    std::string result_name;
    if (want_result) {
      result_name = "__ret" + suffix;
      out.push_back(make_decl(*fn.return_type, result_name));
    }

    // Bind formals: scalars become initialized locals, arrays map straight
    // to the actual array names.
    std::map<std::string, std::string> formal_map;
    for (size_t i = 0; i < fn.params.size(); ++i) {
      const Param& p = fn.params[i];
      if (is_array_param(p.kind)) {
        const auto* ref = std::get_if<VarRef>(&args[i].node);
        if (!ref)
          fail(ErrCode::TypeMismatch, "array argument must be an array name", args[i].pos);
        formal_map[p.name] = ref->name;
      } else {
        std::string temp = p.name + suffix;
        out.push_back(make_decl_init(param_elem_type(p.kind), temp, args[i]));
        formal_map[p.name] = temp;
      }
    }

    // Rename body-local declarations and labels with the suffix; map free
    // names through the formal bindings.
    StmtBlock body = fn.body;
    ScopedRewrite rewrite;
    rewrite.on_decl = [&](const std::string& name) { return name + suffix; };
    rewrite.on_label = [&](const std::string& name) { return name + suffix; };
    rewrite.on_free = [&](const std::string& name) {
      auto it = formal_map.find(name);
      return it != formal_map.end() ? it->second : name;
    };
    rewrite.block(body);

    // Rewrite returns. A single trailing return needs no control flow.
    size_t return_count = 0;
    for_each_stmt(body, [&](const Stmt& s) {
      if (std::get_if<ReturnStmt>(&s.node)) ++return_count;
    });
    bool trailing_only = return_count == 1 && !body.stmts.empty() &&
                         std::get_if<ReturnStmt>(&body.stmts.back().node) != nullptr;
    std::string end_label = "__end" + suffix;
    StmtBlock rewritten =
        rewrite_returns(body, result_name, trailing_only ? "" : end_label);
    if (return_count > 0 && !trailing_only)
      rewritten.stmts.push_back(Stmt{{}, LabelStmt{end_label}});

    // The inlined body may itself contain calls; expand them too.
    StmtBlock expanded = transform_block(rewritten);
    for (auto& s : expanded.stmts) out.push_back(std::move(s));
    return result_name;
  }

  /// Return statements become `result = e; goto end;` (or just the
  /// assignment when `end_label` is empty, i.e. the trailing-return case).
  StmtBlock rewrite_returns(const StmtBlock& block, const std::string& result_name,
                            const std::string& end_label) {
    StmtBlock out;
    for (const auto& stmt : block.stmts) {
      if (const auto* ret = std::get_if<ReturnStmt>(&stmt.node)) {
        if (ret->value && !result_name.empty())
          out.stmts.push_back(make_assign(result_name, *ret->value));
        if (!end_label.empty()) out.stmts.push_back(Stmt{stmt.pos, GotoStmt{end_label}});
        continue;
      }
      Stmt copy = stmt;
      std::visit(
          [&](auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, IfStmt>) {
              node.then_body = rewrite_returns(node.then_body, result_name, end_label);
              if (node.else_body)
                node.else_body = rewrite_returns(*node.else_body, result_name, end_label);
            } else if constexpr (std::is_same_v<T, ForStmt>) {
              node.body = rewrite_returns(node.body, result_name, end_label);
            } else if constexpr (std::is_same_v<T, WhileStmt>) {
              node.body = rewrite_returns(node.body, result_name, end_label);
            }
          },
          copy.node);
      out.stmts.push_back(std::move(copy));
    }
    return out;
  }

  void transform_stmt(const Stmt& stmt, std::vector<Stmt>& out) {
    Stmt copy = stmt;
    std::visit(
        [&](auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            if (node.init) extract_calls(*node.init, out);
            out.push_back(std::move(copy));
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (node.target.index) extract_calls(*node.target.index, out);
            extract_calls(*node.value, out);
            out.push_back(std::move(copy));
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            extract_calls(*node.cond, out);  // evaluated once on entry
            node.then_body = transform_block(node.then_body);
            if (node.else_body) node.else_body = transform_block(*node.else_body);
            out.push_back(std::move(copy));
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            transform_for(node, stmt.pos, out);
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            transform_while(node, stmt.pos, out);
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            if (node.target.index) extract_calls(*node.target.index, out);
            extract_calls(*node.value, out);
            out.push_back(std::move(copy));
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            if (node.value) extract_calls(*node.value, out);
            out.push_back(std::move(copy));
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            std::vector<Expr> args = node.args;
            for (auto& a : args) extract_calls(a, out);
            const FuncDef& fn = require_fn(node.callee, stmt.pos);
            expand_call(fn, args, out, /*want_result=*/fn.return_type.has_value());
          } else {
            out.push_back(std::move(copy));
          }
        },
        copy.node);
  }

  /// Loop conditions/steps re-evaluate every iteration, so calls there
  /// cannot be hoisted above the loop. The loop is rewritten around a temp
  /// that is recomputed at the end of the body.
  void transform_while(WhileStmt& node, SourcePos pos, std::vector<Stmt>& out) {
    StmtBlock body = transform_block(node.body);
    if (!expr_has_call(*node.cond)) {
      out.push_back(Stmt{pos, WhileStmt{std::move(node.cond), std::move(body)}});
      return;
    }
    std::string temp = "__cond__inl" + std::to_string(counter_++);
    Expr cond1 = *node.cond;
    Expr cond2 = *node.cond;
    std::vector<Stmt> tail;
    extract_calls(cond2, tail);
    tail.push_back(make_assign(temp, std::move(cond2)));

    extract_calls(cond1, out);
    out.push_back(make_decl_init(ScalarType::Int32, temp, std::move(cond1)));
    for (auto& s : tail) body.stmts.push_back(s);
    out.push_back(Stmt{pos, WhileStmt{box<Expr>(make_var(temp)), std::move(body)}});
  }

  void transform_for(ForStmt& node, SourcePos pos, std::vector<Stmt>& out) {
    bool calls_in_header = expr_has_call(*node.cond);
    for_each_expr_shallow(*node.step,
                          [&](Expr& e) { calls_in_header |= expr_has_call(e); });
    StmtBlock body = transform_block(node.body);
    if (!calls_in_header) {
      std::vector<Stmt> init_out;
      Stmt init = *node.init;
      transform_stmt(init, init_out);  // init runs once; hoisting is safe
      Stmt residual;
      bool simple_tail =
          !init_out.empty() && (std::get_if<DeclStmt>(&init_out.back().node) != nullptr ||
                                std::get_if<AssignStmt>(&init_out.back().node) != nullptr);
      if (simple_tail) {
        residual = std::move(init_out.back());
        init_out.pop_back();
      } else {
        residual =
            make_decl_init(ScalarType::Int32, "__forinit" + std::to_string(counter_++),
                           make_int(0));
      }
      for (auto& s : init_out) out.push_back(std::move(s));
      out.push_back(Stmt{pos, ForStmt{box<Stmt>(std::move(residual)), std::move(node.cond),
                                      std::move(node.step), std::move(body)}});
      return;
    }

    // Rewrite `for (init; cond; step)` as an init + while over a recomputed
    // condition temp. A declaring init is renamed to keep the enclosing
    // scope clean.
    Stmt init = *node.init;
    if (auto* decl = std::get_if<DeclStmt>(&init.node)) {
      std::string fresh = decl->name + "__h" + std::to_string(counter_++);
      std::map<std::string, std::string> remap{{decl->name, fresh}};
      ScopedRewrite rewrite;
      rewrite.on_free = [&](const std::string& name) {
        auto it = remap.find(name);
        return it != remap.end() ? it->second : name;
      };
      rewrite.scopes.emplace_back();
      rewrite.expr(*node.cond);
      rewrite.stmt(*node.step);
      rewrite.block(body);
      rewrite.scopes.pop_back();
      decl->name = fresh;
    }
    transform_stmt(init, out);

    WhileStmt loop;
    StmtBlock loop_body = std::move(body);
    std::vector<Stmt> step_out;
    transform_stmt(*node.step, step_out);
    for (auto& s : step_out) loop_body.stmts.push_back(std::move(s));
    loop.cond = std::move(node.cond);
    loop.body = std::move(loop_body);
    transform_while(loop, pos, out);
  }
};

}  // namespace

Kernel inline_calls(const Kernel& kernel, const std::vector<FuncDef>& funcs) {
  Inliner inliner(funcs);
  Kernel out = kernel;
  out.body = inliner.transform_block(kernel.body);
  return out;
}

// ---------------------------------------------------------------------------
// lift_declarations
// ---------------------------------------------------------------------------

namespace {

class Lifter {
 public:
  explicit Lifter(const Kernel& kernel) {
    for (const auto& p : kernel.params) used_.insert(p.name);
    for (const auto& sh : kernel.shared_decls) used_.insert(sh.name);
  }

  Kernel run(const Kernel& kernel) {
    Kernel out = kernel;
    scopes_.emplace_back();
    StmtBlock transformed;
    transformed.stmts = transform_block(kernel.body);
    scopes_.pop_back();

    StmtBlock body;
    for (const auto& [type, name] : lifted_) body.stmts.push_back(make_decl(type, name));
    for (auto& s : transformed.stmts) body.stmts.push_back(std::move(s));
    out.body = std::move(body);
    return out;
  }

 private:
  std::set<std::string> used_;
  std::vector<std::map<std::string, std::string>> scopes_;
  std::vector<std::pair<ScalarType, std::string>> lifted_;

  std::string unique_name(const std::string& base) {
    if (used_.insert(base).second) return base;
    for (int i = 2;; ++i) {
      std::string candidate = base + "_" + std::to_string(i);
      if (used_.insert(candidate).second) return candidate;
    }
  }

  std::string resolve(const std::string& name) {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return found->second;
    }
    return name;  // param or shared array
  }

  void rewrite_expr(Expr& e) {
    std::visit(
        [&](auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, VarRef>) {
            node.name = resolve(node.name);
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            rewrite_expr(*node.operand);
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            rewrite_expr(*node.lhs);
            rewrite_expr(*node.rhs);
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            node.array = resolve(node.array);
            rewrite_expr(*node.index);
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            for (auto& a : node.args) rewrite_expr(a);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            rewrite_expr(*node.value);
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            fail(ErrCode::InvalidArgument, "lift_declarations needs a call-free kernel");
          }
        },
        e.node);
  }

  /// Lifts one declaration; returns the replacement assignment when it had
  /// an initializer.
  std::optional<Stmt> lift_decl(Stmt& stmt, DeclStmt& decl) {
    if (decl.init) rewrite_expr(*decl.init);
    std::string fresh = unique_name(decl.name);
    scopes_.back()[decl.name] = fresh;
    lifted_.emplace_back(decl.type, fresh);
    if (decl.init) return make_assign(fresh, std::move(*decl.init));
    (void)stmt;
    return std::nullopt;
  }

  /// A for-header declaration always needs a residual statement; an
  /// uninitialized one becomes a zero assignment (locals read as zero).
  Stmt lift_header_decl(Stmt& stmt, DeclStmt& decl) {
    Expr init = decl.init ? std::move(*decl.init)
                          : (decl.type == ScalarType::Int32 ? make_int(0) : make_float(0.0f));
    if (decl.init) {
      decl.init = {};
      rewrite_expr(init);
    }
    std::string fresh = unique_name(decl.name);
    scopes_.back()[decl.name] = fresh;
    lifted_.emplace_back(decl.type, fresh);
    (void)stmt;
    return make_assign(fresh, std::move(init));
  }

  std::vector<Stmt> transform_block(const StmtBlock& block) {
    scopes_.emplace_back();
    std::vector<Stmt> out;
    for (const auto& original : block.stmts) {
      Stmt stmt = original;
      std::visit(
          [&](auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, DeclStmt>) {
              if (auto assign = lift_decl(stmt, node)) out.push_back(std::move(*assign));
            } else if constexpr (std::is_same_v<T, AssignStmt>) {
              node.target.name = resolve(node.target.name);
              if (node.target.index) rewrite_expr(*node.target.index);
              rewrite_expr(*node.value);
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, IfStmt>) {
              rewrite_expr(*node.cond);
              node.then_body.stmts = transform_block(node.then_body);
              if (node.else_body) node.else_body->stmts = transform_block(*node.else_body);
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, ForStmt>) {
              scopes_.emplace_back();
              if (auto* decl = std::get_if<DeclStmt>(&node.init->node)) {
                *node.init = lift_header_decl(*node.init, *decl);
              } else {
                transform_simple(*node.init);
              }
              rewrite_expr(*node.cond);
              transform_simple(*node.step);
              node.body.stmts = transform_block(node.body);
              scopes_.pop_back();
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, WhileStmt>) {
              rewrite_expr(*node.cond);
              node.body.stmts = transform_block(node.body);
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
              node.target.name = resolve(node.target.name);
              if (node.target.index) rewrite_expr(*node.target.index);
              rewrite_expr(*node.value);
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, ReturnStmt>) {
              if (node.value) rewrite_expr(*node.value);
              out.push_back(std::move(stmt));
            } else if constexpr (std::is_same_v<T, CallStmt>) {
              fail(ErrCode::InvalidArgument, "lift_declarations needs a call-free kernel",
                   stmt.pos);
            } else {
              out.push_back(std::move(stmt));
            }
          },
          stmt.node);
    }
    scopes_.pop_back();
    return out;
  }

  void transform_simple(Stmt& s) {
    if (auto* decl = std::get_if<DeclStmt>(&s.node)) {
      s = lift_header_decl(s, *decl);
    } else if (auto* assign = std::get_if<AssignStmt>(&s.node)) {
      assign->target.name = resolve(assign->target.name);
      if (assign->target.index) rewrite_expr(*assign->target.index);
      rewrite_expr(*assign->value);
    }
  }
};

}  // namespace

Kernel lift_declarations(const Kernel& kernel) {
  if (contains_calls(kernel.body))
    fail(ErrCode::InvalidArgument, "lift_declarations needs a call-free kernel", kernel.pos);
  return Lifter(kernel).run(kernel);
}

bool has_decl_prefix_form(const Kernel& kernel) {
  bool seen_non_decl = false;
  for (const auto& stmt : kernel.body.stmts) {
    if (std::get_if<DeclStmt>(&stmt.node)) {
      if (seen_non_decl) return false;
    } else {
      seen_non_decl = true;
    }
  }
  // no nested declarations anywhere
  bool nested_decl = false;
  for (const auto& stmt : kernel.body.stmts) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IfStmt> || std::is_same_v<T, ForStmt> ||
                        std::is_same_v<T, WhileStmt>) {
            StmtBlock probe;
            probe.stmts.push_back(stmt);
            for_each_stmt(probe, [&](const Stmt& s) {
              if (&s != &probe.stmts[0] && std::get_if<DeclStmt>(&s.node)) nested_decl = true;
            });
          }
        },
        stmt.node);
  }
  return !nested_decl;
}

// ---------------------------------------------------------------------------
// rename_locals
// ---------------------------------------------------------------------------

std::pair<Kernel, std::vector<std::pair<std::string, std::string>>>
rename_locals(const Kernel& kernel, const std::string& prefix) {
  Kernel out = kernel;
  std::vector<std::pair<std::string, std::string>> mapping;

  std::set<std::string> taken;
  for (const auto& p : kernel.params) taken.insert(p.name);
  auto prefixed = [&](const std::string& name) {
    std::string candidate = prefix + name;
    if (taken.insert(candidate).second) return candidate;
    for (int i = 2;; ++i) {
      std::string alt = candidate + "_" + std::to_string(i);
      if (taken.insert(alt).second) return alt;
    }
  };

  std::map<std::string, std::string> shared_map;
  for (auto& sh : out.shared_decls) {
    std::string fresh = prefixed(sh.name);
    mapping.emplace_back(sh.name, fresh);
    shared_map[sh.name] = fresh;
    sh.name = fresh;
  }

  std::map<std::string, std::string> label_map;
  ScopedRewrite rewrite;
  rewrite.on_decl = [&](const std::string& name) {
    std::string fresh = prefixed(name);
    mapping.emplace_back(name, fresh);
    return fresh;
  };
  rewrite.on_free = [&](const std::string& name) {
    auto it = shared_map.find(name);
    return it != shared_map.end() ? it->second : name;
  };
  rewrite.on_label = [&](const std::string& name) {
    auto it = label_map.find(name);
    if (it != label_map.end()) return it->second;
    std::string fresh = prefix + name;
    label_map[name] = fresh;
    mapping.emplace_back(name, fresh);
    return fresh;
  };
  rewrite.block(out.body);
  return {std::move(out), std::move(mapping)};
}

Kernel normalize_kernel(const Kernel& kernel, const std::vector<FuncDef>& funcs,
                        const std::string& prefix) {
  Kernel inlined = inline_calls(kernel, funcs);
  Kernel lifted = lift_declarations(inlined);
  return rename_locals(lifted, prefix).first;
}

}  // namespace mkfuse
