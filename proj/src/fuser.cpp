#include "mkfuse/fuser.hpp"

#include <algorithm>
#include <set>

#include "mkfuse/frontend.hpp"

namespace mkfuse {

namespace {

const char* const kPrologueVars[] = {"global_tid",  "tid_1",       "tid_2",
                                     "size_1",      "size_2",      "threadIdx_x",
                                     "threadIdx_y", "threadIdx_z", "blockDim_x",
                                     "blockDim_y",  "blockDim_z"};

bool body_has_calls(const StmtBlock& body) {
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

void require_normalized(const Kernel& k) {
  if (body_has_calls(k.body))
    fail(ErrCode::InvalidArgument, "kernel '" + k.name + "' still contains calls", k.pos);
  if (!has_decl_prefix_form(k))
    fail(ErrCode::InvalidArgument,
         "kernel '" + k.name + "' is not in lifted declaration form", k.pos);
}

/// Declared dims when they already match d; otherwise rescale x for a
/// tunable kernel, keeping y and z.
Dim3 partition_dims(const Kernel& k, int d) {
  if (k.block_dims.count() == d) return k.block_dims;
  if (!k.tunable)
    fail(ErrCode::DimensionMismatch,
         "kernel '" + k.name + "' has fixed dims " + std::to_string(k.block_dims.count()) +
             " but the partition assigns " + std::to_string(d));
  int yz = k.block_dims.y * k.block_dims.z;
  if (d % yz != 0)
    fail(ErrCode::DimensionMismatch,
         "partition " + std::to_string(d) + " is not divisible by the declared y*z = " +
             std::to_string(yz) + " of kernel '" + k.name + "'");
  return Dim3{d / yz, k.block_dims.y, k.block_dims.z};
}

}  // namespace

void FusionConfig::validate(const SMConfig& sm) const {
  if (d1 < 32 || d2 < 32 || d1 % 32 != 0 || d2 % 32 != 0)
    fail(ErrCode::InvalidArgument,
         "thread partition must be warp aligned: d1 = " + std::to_string(d1) +
             ", d2 = " + std::to_string(d2));
  if (d0 != d1 + d2)
    fail(ErrCode::InvalidArgument, "d0 must equal d1 + d2");
  if (d0 > sm.max_threads_per_sm)
    fail(ErrCode::ThreadBudgetExceeded,
         "fused block dimension " + std::to_string(d0) + " exceeds the SM thread budget");
  if (reg_cap && *reg_cap <= 0)
    fail(ErrCode::InvalidArgument, "register cap must be positive");
}

StmtBlock build_prologue(Dim3 dims1, Dim3 dims2, int d1) {
  if (dims1.count() != d1)
    fail(ErrCode::DimensionMismatch,
         "prologue dims " + std::to_string(dims1.count()) + " do not match d1 = " +
             std::to_string(d1));
  int d2 = int(dims2.count());

  StmtBlock out;
  for (const char* name : kPrologueVars) out.stmts.push_back(make_decl(ScalarType::Int32, name));

  // global_tid = threadIdx.x + threadIdx.y * blockDim.x
  //            + threadIdx.z * blockDim.x * blockDim.y
  Expr linear = make_binary(
      BinaryOp::Add,
      make_binary(BinaryOp::Add, make_builtin(BuiltinVar::ThreadIdxX),
                  make_binary(BinaryOp::Mul, make_builtin(BuiltinVar::ThreadIdxY),
                              make_builtin(BuiltinVar::BlockDimX))),
      make_binary(BinaryOp::Mul,
                  make_binary(BinaryOp::Mul, make_builtin(BuiltinVar::ThreadIdxZ),
                              make_builtin(BuiltinVar::BlockDimX)),
                  make_builtin(BuiltinVar::BlockDimY)));
  out.stmts.push_back(make_assign("global_tid", std::move(linear)));
  out.stmts.push_back(make_assign("tid_1", make_var("global_tid")));
  out.stmts.push_back(
      make_assign("tid_2", make_binary(BinaryOp::Sub, make_var("global_tid"), make_int(d1))));
  out.stmts.push_back(make_assign("size_1", make_int(d1)));
  out.stmts.push_back(make_assign("size_2", make_int(d2)));

  // Row-major inverse of the linear id within each range.
  auto remap = [](Dim3 dims, Expr base) {
    StmtBlock b;
    b.stmts.push_back(make_assign("blockDim_x", make_int(dims.x)));
    b.stmts.push_back(make_assign("blockDim_y", make_int(dims.y)));
    b.stmts.push_back(make_assign("blockDim_z", make_int(dims.z)));
    b.stmts.push_back(make_assign(
        "threadIdx_x", make_binary(BinaryOp::Mod, base, make_int(dims.x))));
    b.stmts.push_back(make_assign(
        "threadIdx_y",
        make_binary(BinaryOp::Mod, make_binary(BinaryOp::Div, base, make_int(dims.x)),
                    make_int(dims.y))));
    b.stmts.push_back(make_assign(
        "threadIdx_z", make_binary(BinaryOp::Div, base, make_int(dims.x * dims.y))));
    return b;
  };
  Expr shifted = make_binary(BinaryOp::Sub, make_var("global_tid"), make_int(d1));
  out.stmts.push_back(make_if_else(
      make_binary(BinaryOp::Lt, make_var("global_tid"), make_int(d1)),
      remap(dims1, make_var("global_tid")), remap(dims2, std::move(shifted))));
  return out;
}

StmtBlock rewrite_builtins(const StmtBlock& body, int constituent) {
  (void)constituent;  // both ranges share the branch-assigned remap variables
  StmtBlock out = body;
  for_each_stmt(out, [&](Stmt& stmt) {
    for_each_expr_shallow(stmt, [&](Expr& expr) {
      for_each_subexpr(expr, [&](Expr& sub) {
        const auto* ref = std::get_if<BuiltinRef>(&sub.node);
        if (!ref) return;
        switch (ref->builtin) {
          case BuiltinVar::ThreadIdxX: sub.node = VarRef{"threadIdx_x"}; break;
          case BuiltinVar::ThreadIdxY: sub.node = VarRef{"threadIdx_y"}; break;
          case BuiltinVar::ThreadIdxZ: sub.node = VarRef{"threadIdx_z"}; break;
          case BuiltinVar::BlockDimX: sub.node = VarRef{"blockDim_x"}; break;
          case BuiltinVar::BlockDimY: sub.node = VarRef{"blockDim_y"}; break;
          case BuiltinVar::BlockDimZ: sub.node = VarRef{"blockDim_z"}; break;
          default: break;  // blockIdx.* and gridDim.x refer to the shared grid
        }
      });
    });
  });
  return out;
}

StmtBlock replace_barriers(const StmtBlock& body, int id, int count) {
  if (id < 0 || id > 15)
    fail(ErrCode::BadBarrierId, "barrier id " + std::to_string(id) + " outside [0, 15]");
  if (count <= 0 || count % 32 != 0)
    fail(ErrCode::MisalignedCount,
         "barrier count " + std::to_string(count) + " is not a positive multiple of 32");
  StmtBlock out = body;
  for_each_stmt(out, [&](Stmt& stmt) {
    if (std::get_if<BarrierStmt>(&stmt.node))
      stmt.node = PartialBarrierStmt{id, count};
  });
  return out;
}

FusedKernel generate_fused(const Kernel& k1, const Kernel& k2, int d1, int d2,
                           const SMConfig& sm) {
  require_normalized(k1);
  require_normalized(k2);
  if (k1.meta.grid_dim != k2.meta.grid_dim)
    fail(ErrCode::GridMismatch, "grid dimensions differ: '" + k1.name + "' uses " +
                                    std::to_string(k1.meta.grid_dim) + ", '" + k2.name +
                                    "' uses " + std::to_string(k2.meta.grid_dim));

  FusionConfig config;
  config.d1 = d1;
  config.d2 = d2;
  config.d0 = d1 + d2;
  config.validate(sm);
  if (config.d0 > sm.max_threads_per_block)
    fail(ErrCode::ThreadBudgetExceeded,
         "fused block dimension " + std::to_string(config.d0) + " exceeds max threads per block (" +
             std::to_string(sm.max_threads_per_block) + ")");

  FusedKernel fused;
  fused.name = "fused_" + k1.name + "_" + k2.name;
  fused.k1_name = k1.name;
  fused.k2_name = k2.name;
  fused.config = config;
  fused.grid_dim = k1.meta.grid_dim;
  fused.dims1 = partition_dims(k1, d1);
  fused.dims2 = partition_dims(k2, d2);

  // Merge parameters; identical (name, kind) pairs collapse.
  std::set<std::string> param_names;
  for (const Kernel* k : {&k1, &k2}) {
    for (const auto& p : k->params) {
      auto existing = std::find_if(fused.params.begin(), fused.params.end(),
                                   [&](const Param& q) { return q.name == p.name; });
      if (existing == fused.params.end()) {
        fused.params.push_back(p);
        param_names.insert(p.name);
      } else if (existing->kind != p.kind) {
        fail(ErrCode::TypeMismatch,
             "parameter '" + p.name + "' has conflicting types across the two kernels");
      }
    }
  }
  for (const char* name : kPrologueVars)
    if (param_names.count(name))
      fail(ErrCode::InvalidArgument,
           std::string("parameter '") + name + "' collides with a prologue variable");

  // Merge shared arrays and check the per-block budget.
  std::set<std::string> names;
  int64_t shared_bytes = 0;
  for (const Kernel* k : {&k1, &k2}) {
    for (const auto& sh : k->shared_decls) {
      if (!names.insert(sh.name).second)
        fail(ErrCode::InvalidArgument,
             "shared array '" + sh.name + "' appears in both kernels (rename first)");
      fused.shared_decls.push_back(sh);
      shared_bytes += sh.length * 4;
    }
  }
  if (shared_bytes > sm.shmem_per_sm)
    fail(ErrCode::SharedMemoryOverflow,
         "fused kernel needs " + std::to_string(shared_bytes) +
             " bytes of shared memory; the SM has " + std::to_string(sm.shmem_per_sm));

  // Split the lifted bodies into declarations and statements.
  auto split = [&](const Kernel& k, StmtBlock& decls, StmtBlock& rest) {
    size_t i = 0;
    while (i < k.body.stmts.size() && std::get_if<DeclStmt>(&k.body.stmts[i].node)) {
      decls.stmts.push_back(k.body.stmts[i]);
      ++i;
    }
    for (; i < k.body.stmts.size(); ++i) rest.stmts.push_back(k.body.stmts[i]);
  };
  StmtBlock s1, s2;
  split(k1, fused.decls, s1);
  split(k2, fused.decls, s2);
  for (const auto& d : fused.decls.stmts) {
    const auto& decl = std::get<DeclStmt>(d.node);
    if (!names.insert(decl.name).second)
      fail(ErrCode::InvalidArgument,
           "local '" + decl.name + "' appears in both kernels (rename first)");
  }

  StmtBlock prologue = build_prologue(fused.dims1, fused.dims2, d1);
  for (auto& stmt : prologue.stmts) {
    if (std::get_if<DeclStmt>(&stmt.node))
      fused.prologue_decls.stmts.push_back(std::move(stmt));
    else
      fused.prologue.stmts.push_back(std::move(stmt));
  }

  fused.body1 = replace_barriers(rewrite_builtins(s1, 1), 1, d1);
  fused.body2 = replace_barriers(rewrite_builtins(s2, 2), 2, d2);
  fused.guard1 = make_binary(BinaryOp::Lt, make_var("global_tid"), make_int(d1));
  fused.guard2 = make_binary(BinaryOp::Ge, make_var("global_tid"), make_int(d1));
  fused.barriers.entries.push_back(BarrierEntry{1, d1, 1});
  fused.barriers.entries.push_back(BarrierEntry{2, d2, 2});
  return fused;
}

Kernel FusedKernel::to_kernel() const {
  Kernel k;
  k.name = name;
  k.params = params;
  k.block_dims = Dim3{config.d0, 1, 1};
  k.tunable = false;  // the guards bake the partition in
  k.shared_decls = shared_decls;
  k.meta.grid_dim = grid_dim;
  k.meta.regcap = config.reg_cap;
  for (const auto& s : prologue_decls.stmts) k.body.stmts.push_back(s);
  for (const auto& s : decls.stmts) k.body.stmts.push_back(s);
  for (const auto& s : prologue.stmts) k.body.stmts.push_back(s);
  k.body.stmts.push_back(make_if(guard1, body1));
  k.body.stmts.push_back(make_if(guard2, body2));
  return k;
}

LaunchConfig launch_for(const FusedKernel& fused) {
  LaunchConfig l;
  l.grid_dim = fused.grid_dim;
  l.block_dims = Dim3{fused.config.d0, 1, 1};
  l.reg_cap = fused.config.reg_cap;
  return l;
}

// ---------------------------------------------------------------------------
// Goto-style emission (CUDA-flavored)
// ---------------------------------------------------------------------------

namespace {

class CudaPrinter {
 public:
  std::string take() { return std::move(out_); }

  void kernel(const FusedKernel& f) {
    out_ += "__global__ void " + f.name + "(";
    for (size_t i = 0; i < f.params.size(); ++i) {
      if (i) out_ += ", ";
      const Param& p = f.params[i];
      out_ += to_string(param_elem_type(p.kind));
      out_ += is_array_param(p.kind) ? "* " : " ";
      out_ += p.name;
    }
    out_ += ") {\n";
    for (const auto& s : f.prologue_decls.stmts) stmt(s, 1);
    for (const auto& s : f.prologue.stmts) stmt(s, 1);
    for (const auto& sh : f.shared_decls) {
      pad(1);
      out_ += std::string("__shared__ ") + to_string(sh.elem_type) + " " + sh.name + "[" +
              std::to_string(sh.length) + "];\n";
    }
    for (const auto& s : f.decls.stmts) stmt(s, 1);

    pad(1);
    out_ += "if (" + negated(f.guard1) + ") goto K1_end;\n";
    for (const auto& s : f.body1.stmts) stmt(s, 1);
    out_ += "K1_end:;\n";
    pad(1);
    out_ += "if (" + negated(f.guard2) + ") goto K2_end;\n";
    for (const auto& s : f.body2.stmts) stmt(s, 1);
    out_ += "K2_end:;\n";
    out_ += "}\n";
  }

 private:
  std::string out_;

  void pad(int n) { out_.append(size_t(n) * 2, ' '); }

  /// `x >= c` inverts to `x < c`; anything else gets a
  /// plain `!(...)` wrapper.
  std::string negated(const Expr& guard) {
    if (const auto* bin = std::get_if<BinaryExpr>(&guard.node)) {
      if (bin->op == BinaryOp::Ge)
        return expr_text(*bin->lhs) + " < " + expr_text(*bin->rhs);
    }
    return "!(" + expr_text(guard) + ")";
  }

  std::string expr_text(const Expr& e) {
    // Reuse the Mini-Kernel printer for everything but casts and shuffles.
    return cuda_expr(e, 0);
  }

  static int prec_of(BinaryOp op) {
    switch (op) {
      case BinaryOp::LogOr: return 1;
      case BinaryOp::LogAnd: return 2;
      case BinaryOp::BitOr: return 3;
      case BinaryOp::BitXor: return 4;
      case BinaryOp::BitAnd: return 5;
      case BinaryOp::Eq:
      case BinaryOp::Ne: return 6;
      case BinaryOp::Lt:
      case BinaryOp::Le:
      case BinaryOp::Gt:
      case BinaryOp::Ge: return 7;
      case BinaryOp::Shl:
      case BinaryOp::Shr: return 8;
      case BinaryOp::Add:
      case BinaryOp::Sub: return 9;
      default: return 10;
    }
  }

  static const char* op_text(BinaryOp op) {
    switch (op) {
      case BinaryOp::Add: return "+";
      case BinaryOp::Sub: return "-";
      case BinaryOp::Mul: return "*";
      case BinaryOp::Div: return "/";
      case BinaryOp::Mod: return "%";
      case BinaryOp::Shl: return "<<";
      case BinaryOp::Shr: return ">>";
      case BinaryOp::BitAnd: return "&";
      case BinaryOp::BitXor: return "^";
      case BinaryOp::BitOr: return "|";
      case BinaryOp::Lt: return "<";
      case BinaryOp::Le: return "<=";
      case BinaryOp::Gt: return ">";
      case BinaryOp::Ge: return ">=";
      case BinaryOp::Eq: return "==";
      case BinaryOp::Ne: return "!=";
      case BinaryOp::LogAnd: return "&&";
      case BinaryOp::LogOr: return "||";
    }
    return "?";
  }

  std::string cuda_expr(const Expr& e, int parent_prec) {
    return std::visit(
        [&](const auto& node) -> std::string {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IntLit>) {
            return std::to_string(node.value);
          } else if constexpr (std::is_same_v<T, FloatLit>) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.9g", double(node.value));
            std::string s(buf);
            if (s.find('.') == std::string::npos && s.find('e') == std::string::npos)
              s += ".0";
            return s + "f";
          } else if constexpr (std::is_same_v<T, VarRef>) {
            return node.name;
          } else if constexpr (std::is_same_v<T, BuiltinRef>) {
            switch (node.builtin) {
              case BuiltinVar::ThreadIdxX: return "threadIdx.x";
              case BuiltinVar::ThreadIdxY: return "threadIdx.y";
              case BuiltinVar::ThreadIdxZ: return "threadIdx.z";
              case BuiltinVar::BlockIdxX: return "blockIdx.x";
              case BuiltinVar::BlockIdxY: return "blockIdx.y";
              case BuiltinVar::BlockIdxZ: return "blockIdx.z";
              case BuiltinVar::BlockDimX: return "blockDim.x";
              case BuiltinVar::BlockDimY: return "blockDim.y";
              case BuiltinVar::BlockDimZ: return "blockDim.z";
              case BuiltinVar::GridDimX: return "gridDim.x";
            }
            return "?";
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            std::string inner = cuda_expr(*node.operand, 11);
            std::string text = (node.op == UnaryOp::Neg ? "-" : "!") + inner;
            return 11 < parent_prec ? "(" + text + ")" : text;
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            int prec = prec_of(node.op);
            std::string text = cuda_expr(*node.lhs, prec) + " " + op_text(node.op) + " " +
                               cuda_expr(*node.rhs, prec + 1);
            return prec < parent_prec ? "(" + text + ")" : text;
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            return node.array + "[" + cuda_expr(*node.index, 0) + "]";
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            switch (node.which) {
              case Intrinsic::Min:
                return "min(" + cuda_expr(node.args[0], 0) + ", " +
                       cuda_expr(node.args[1], 0) + ")";
              case Intrinsic::Max:
                return "max(" + cuda_expr(node.args[0], 0) + ", " +
                       cuda_expr(node.args[1], 0) + ")";
              case Intrinsic::Fmaxf:
                return "fmaxf(" + cuda_expr(node.args[0], 0) + ", " +
                       cuda_expr(node.args[1], 0) + ")";
              case Intrinsic::CastInt:
                return "(int)(" + cuda_expr(node.args[0], 0) + ")";
              case Intrinsic::CastFloat:
                return "(float)(" + cuda_expr(node.args[0], 0) + ")";
            }
            return "?";
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            return "__shfl_xor_sync(0xffffffff, " + cuda_expr(*node.value, 0) + ", " +
                   std::to_string(node.lane_mask) + ")";
          } else {
            static_assert(std::is_same_v<T, CallExpr>);
            std::string text = node.callee + "(";
            for (size_t i = 0; i < node.args.size(); ++i) {
              if (i) text += ", ";
              text += cuda_expr(node.args[i], 0);
            }
            return text + ")";
          }
        },
        e.node);
  }

  void stmt(const Stmt& s, int indent) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            pad(indent);
            out_ += std::string(to_string(node.type)) + " " + node.name;
            if (node.init) out_ += " = " + cuda_expr(*node.init, 0);
            out_ += ";\n";
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            pad(indent);
            out_ += lvalue_text(node.target) + " = " + cuda_expr(*node.value, 0) + ";\n";
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            pad(indent);
            out_ += "if (" + cuda_expr(*node.cond, 0) + ") {\n";
            for (const auto& inner : node.then_body.stmts) stmt(inner, indent + 1);
            pad(indent);
            out_ += "}";
            if (node.else_body) {
              out_ += " else {\n";
              for (const auto& inner : node.else_body->stmts) stmt(inner, indent + 1);
              pad(indent);
              out_ += "}";
            }
            out_ += "\n";
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            pad(indent);
            out_ += "for (" + simple_text(*node.init) + "; " + cuda_expr(*node.cond, 0) +
                    "; " + simple_text(*node.step) + ") {\n";
            for (const auto& inner : node.body.stmts) stmt(inner, indent + 1);
            pad(indent);
            out_ += "}\n";
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            pad(indent);
            out_ += "while (" + cuda_expr(*node.cond, 0) + ") {\n";
            for (const auto& inner : node.body.stmts) stmt(inner, indent + 1);
            pad(indent);
            out_ += "}\n";
          } else if constexpr (std::is_same_v<T, BarrierStmt>) {
            pad(indent);
            out_ += "__syncthreads();\n";
          } else if constexpr (std::is_same_v<T, PartialBarrierStmt>) {
            pad(indent);
            out_ += "asm(\"bar.sync " + std::to_string(node.id) + ", " +
                    std::to_string(node.count) + ";\");\n";
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            pad(indent);
            out_ += "atomicAdd(&" + lvalue_text(node.target) + ", " +
                    cuda_expr(*node.value, 0) + ");\n";
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            pad(indent);
            out_ += "return;\n";
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            pad(indent);
            out_ += node.callee + "(";
            for (size_t i = 0; i < node.args.size(); ++i) {
              if (i) out_ += ", ";
              out_ += cuda_expr(node.args[i], 0);
            }
            out_ += ");\n";
          } else if constexpr (std::is_same_v<T, LabelStmt>) {
            out_ += node.name + ":;\n";
          } else {
            static_assert(std::is_same_v<T, GotoStmt>);
            pad(indent);
            out_ += "goto " + node.label + ";\n";
          }
        },
        s.node);
  }

  std::string lvalue_text(const LValue& lv) {
    std::string text = lv.name;
    if (lv.index) text += "[" + cuda_expr(*lv.index, 0) + "]";
    return text;
  }

  std::string simple_text(const Stmt& s) {
    if (const auto* decl = std::get_if<DeclStmt>(&s.node)) {
      std::string text = std::string(to_string(decl->type)) + " " + decl->name;
      if (decl->init) text += " = " + cuda_expr(*decl->init, 0);
      return text;
    }
    if (const auto* assign = std::get_if<AssignStmt>(&s.node))
      return lvalue_text(assign->target) + " = " + cuda_expr(*assign->value, 0);
    return "";
  }
};

}  // namespace

std::string emit_source(const FusedKernel& fused, EmitStyle style) {
  if (style == EmitStyle::Structured) return emit_minikernel(fused.to_kernel());
  CudaPrinter printer;
  printer.kernel(fused);
  return printer.take();
}

}  // namespace mkfuse
