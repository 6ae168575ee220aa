#include <map>

#include "sim_internal.hpp"

namespace mkfuse::simdetail {

namespace {

enum class Ty : uint8_t { Int, Float };

struct Sym {
  enum class Kind : uint8_t { Local, Shared, Global } kind;
  int id = -1;
  Ty type = Ty::Int;
};

class Lowerer {
 public:
  explicit Lowerer(const Kernel& kernel) : kernel_(kernel) {
    out_.kernel_name = kernel.name;
    out_.declared_dims = kernel.block_dims;
    out_.grid_dim = kernel.meta.grid_dim;
    out_.meta_regs = kernel.meta.regs;

    scopes_.emplace_back();
    for (const auto& p : kernel.params) {
      if (is_array_param(p.kind)) {
        int id = int(out_.global_params.size());
        out_.global_params.push_back(p);
        scopes_.back()[p.name] =
            Sym{Sym::Kind::Global, id,
                param_elem_type(p.kind) == ScalarType::Int32 ? Ty::Int : Ty::Float};
      } else {
        int slot = alloc_local(p.name, param_elem_type(p.kind), /*is_param=*/true);
        scopes_.back()[p.name] =
            Sym{Sym::Kind::Local, slot,
                param_elem_type(p.kind) == ScalarType::Int32 ? Ty::Int : Ty::Float};
      }
    }
    for (const auto& sh : kernel.shared_decls) {
      int id = int(out_.shared.size());
      out_.shared.push_back(sh);
      scopes_.back()[sh.name] =
          Sym{Sym::Kind::Shared, id, sh.elem_type == ScalarType::Int32 ? Ty::Int : Ty::Float};
    }
  }

  LoweredKernel run() {
    lower_block(kernel_.body);
    emit(Ins{Ins::Op::Return, Ins::Target::Local, -1, false, {}, {}, -1, 0, -1, {}});
    for (auto& [index, label] : pending_gotos_) {
      auto it = labels_.find(label);
      if (it == labels_.end())
        fail(ErrCode::UnresolvedLabel, "goto targets unknown label '" + label + "'");
      out_.code[size_t(index)].jump = it->second;
    }
    return std::move(out_);
  }

 private:
  const Kernel& kernel_;
  LoweredKernel out_;
  std::vector<std::map<std::string, Sym>> scopes_;
  std::map<std::string, int> labels_;
  std::vector<std::pair<int, std::string>> pending_gotos_;
  int stack_depth_ = 0;

  int alloc_local(const std::string& name, ScalarType type, bool is_param) {
    out_.locals.push_back(LocalInfo{name, type, is_param});
    return int(out_.locals.size()) - 1;
  }

  const Sym& resolve(const std::string& name, SourcePos pos) {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return found->second;
    }
    fail(ErrCode::UnknownIdentifier, "unknown identifier '" + name + "'", pos);
  }

  void emit(Ins ins) { out_.code.push_back(std::move(ins)); }
  int here() const { return int(out_.code.size()); }

  // ---- expression compilation -------------------------------------------

  void bump(std::vector<SOp>& prog, int delta) {
    (void)prog;
    stack_depth_ += delta;
    if (stack_depth_ > out_.max_stack) out_.max_stack = stack_depth_;
  }

  Ty compile(const Expr& e, std::vector<SOp>& prog) {
    return std::visit(
        [&](const auto& node) -> Ty {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IntLit>) {
            prog.push_back(SOp{SOp::K::PushInt, node.value, 0.0f, {}, {}, false, e.pos});
            bump(prog, 1);
            return Ty::Int;
          } else if constexpr (std::is_same_v<T, FloatLit>) {
            prog.push_back(SOp{SOp::K::PushFloat, 0, node.value, {}, {}, true, e.pos});
            bump(prog, 1);
            return Ty::Float;
          } else if constexpr (std::is_same_v<T, VarRef>) {
            const Sym& sym = resolve(node.name, e.pos);
            if (sym.kind != Sym::Kind::Local)
              fail(ErrCode::TypeMismatch, "array '" + node.name + "' used as a scalar", e.pos);
            prog.push_back(SOp{SOp::K::LoadLocal, sym.id, 0.0f, {}, {},
                               sym.type == Ty::Float, e.pos});
            bump(prog, 1);
            return sym.type;
          } else if constexpr (std::is_same_v<T, BuiltinRef>) {
            prog.push_back(SOp{SOp::K::LoadBuiltin, int(node.builtin), 0.0f, {}, {}, false,
                               e.pos});
            bump(prog, 1);
            return Ty::Int;
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            Ty t = compile(*node.operand, prog);
            prog.push_back(SOp{SOp::K::Un, 0, 0.0f, node.op, {}, t == Ty::Float, e.pos});
            return node.op == UnaryOp::LogNot ? Ty::Int : t;
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            return compile_binary(node, e.pos, prog);
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            const Sym& sym = resolve(node.array, e.pos);
            if (sym.kind == Sym::Kind::Local)
              fail(ErrCode::TypeMismatch, "'" + node.array + "' is not an array", e.pos);
            compile(*node.index, prog);
            prog.push_back(SOp{sym.kind == Sym::Kind::Global ? SOp::K::LoadGlobal
                                                             : SOp::K::LoadShared,
                               sym.id, 0.0f, {}, {}, sym.type == Ty::Float, e.pos});
            return sym.type;  // pops index, pushes element: depth unchanged
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            return compile_intrinsic(node, e.pos, prog);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            Ty t = compile(*node.value, prog);
            prog.push_back(SOp{SOp::K::Shuffle, node.lane_mask, 0.0f, {}, {},
                               t == Ty::Float, e.pos});
            return t;
          } else {
            static_assert(std::is_same_v<T, CallExpr>);
            fail(ErrCode::InvalidArgument, "calls must be inlined before simulation", e.pos);
          }
        },
        e.node);
  }

  Ty compile_binary(const BinaryExpr& bin, SourcePos pos, std::vector<SOp>& prog) {
    std::vector<SOp> lhs, rhs;
    int saved = stack_depth_;
    Ty lt = compile(*bin.lhs, lhs);
    Ty rt = compile(*bin.rhs, rhs);
    stack_depth_ = saved;

    bool float_domain = lt == Ty::Float || rt == Ty::Float;
    switch (bin.op) {
      case BinaryOp::Mod:
      case BinaryOp::Shl:
      case BinaryOp::Shr:
      case BinaryOp::BitAnd:
      case BinaryOp::BitXor:
      case BinaryOp::BitOr:
      case BinaryOp::LogAnd:
      case BinaryOp::LogOr:
        if (float_domain) fail(ErrCode::TypeMismatch, "operator needs int operands", pos);
        break;
      default:
        break;
    }

    for (auto& op : lhs) prog.push_back(std::move(op));
    bump(prog, 1);
    if (float_domain && lt == Ty::Int)
      prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
    for (auto& op : rhs) prog.push_back(std::move(op));
    bump(prog, 1);
    if (float_domain && rt == Ty::Int)
      prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
    prog.push_back(SOp{SOp::K::Bin, 0, 0.0f, {}, bin.op, float_domain, pos});
    bump(prog, -1);

    switch (bin.op) {
      case BinaryOp::Lt:
      case BinaryOp::Le:
      case BinaryOp::Gt:
      case BinaryOp::Ge:
      case BinaryOp::Eq:
      case BinaryOp::Ne:
      case BinaryOp::LogAnd:
      case BinaryOp::LogOr:
        return Ty::Int;
      default:
        return float_domain ? Ty::Float : Ty::Int;
    }
  }

  Ty compile_intrinsic(const IntrinsicCall& call, SourcePos pos, std::vector<SOp>& prog) {
    switch (call.which) {
      case Intrinsic::CastInt: {
        Ty t = compile(call.args[0], prog);
        if (t == Ty::Float)
          prog.push_back(SOp{SOp::K::CastFloatToInt, 0, 0.0f, {}, {}, true, pos});
        return Ty::Int;
      }
      case Intrinsic::CastFloat: {
        Ty t = compile(call.args[0], prog);
        if (t == Ty::Int)
          prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
        return Ty::Float;
      }
      case Intrinsic::Fmaxf: {
        compile_promoted_pair(call.args[0], call.args[1], /*force_float=*/true, prog, pos);
        prog.push_back(SOp{SOp::K::FmaxfOp, 0, 0.0f, {}, {}, true, pos});
        bump(prog, -1);
        return Ty::Float;
      }
      default: {  // Min / Max
        bool float_domain =
            compile_promoted_pair(call.args[0], call.args[1], /*force_float=*/false, prog, pos);
        prog.push_back(SOp{call.which == Intrinsic::Min ? SOp::K::MinOp : SOp::K::MaxOp, 0,
                           0.0f, {}, {}, float_domain, pos});
        bump(prog, -1);
        return float_domain ? Ty::Float : Ty::Int;
      }
    }
  }

  /// Compiles two arguments with mutual promotion; returns the float flag.
  bool compile_promoted_pair(const Expr& a, const Expr& b, bool force_float,
                             std::vector<SOp>& prog, SourcePos pos) {
    std::vector<SOp> pa, pb;
    int saved = stack_depth_;
    Ty ta = compile(a, pa);
    Ty tb = compile(b, pb);
    stack_depth_ = saved;
    bool float_domain = force_float || ta == Ty::Float || tb == Ty::Float;
    for (auto& op : pa) prog.push_back(std::move(op));
    bump(prog, 1);
    if (float_domain && ta == Ty::Int)
      prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
    for (auto& op : pb) prog.push_back(std::move(op));
    bump(prog, 1);
    if (float_domain && tb == Ty::Int)
      prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
    return float_domain;
  }

  /// Compiles `e` and coerces it to `target` (int promotion only).
  std::vector<SOp> compile_to(const Expr& e, Ty target, SourcePos pos) {
    std::vector<SOp> prog;
    int saved = stack_depth_;
    Ty t = compile(e, prog);
    stack_depth_ = saved;
    if (t == Ty::Int && target == Ty::Float)
      prog.push_back(SOp{SOp::K::CastIntToFloat, 0, 0.0f, {}, {}, false, pos});
    if (t == Ty::Float && target == Ty::Int)
      fail(ErrCode::TypeMismatch, "cannot assign float to int without int() cast", pos);
    return prog;
  }

  // ---- statements --------------------------------------------------------

  void lower_store(Ins::Op op, const LValue& target, const Expr& value, SourcePos pos) {
    Ins ins;
    ins.op = op;
    ins.pos = pos;
    const Sym& sym = resolve(target.name, target.pos);
    if (sym.kind == Sym::Kind::Local) {
      if (target.index)
        fail(ErrCode::TypeMismatch, "'" + target.name + "' is not an array", target.pos);
      if (op == Ins::Op::AtomicAdd)
        fail(ErrCode::TypeMismatch, "atomic_add target must be an array element", pos);
      ins.tkind = Ins::Target::Local;
    } else {
      if (!target.index)
        fail(ErrCode::TypeMismatch, "array '" + target.name + "' used as a scalar",
             target.pos);
      ins.tkind = sym.kind == Sym::Kind::Shared ? Ins::Target::Shared : Ins::Target::Global;
      ins.index = compile_to(*target.index, Ty::Int, target.pos);
    }
    ins.tid = sym.id;
    ins.target_float = sym.type == Ty::Float;
    ins.value = compile_to(value, sym.type, pos);
    emit(std::move(ins));
  }

  void lower_stmt(const Stmt& stmt) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            int slot = alloc_local(node.name, node.type, false);
            scopes_.back()[node.name] =
                Sym{Sym::Kind::Local, slot, node.type == ScalarType::Int32 ? Ty::Int : Ty::Float};
            if (node.init) {
              Ins ins;
              ins.op = Ins::Op::Assign;
              ins.pos = stmt.pos;
              ins.tkind = Ins::Target::Local;
              ins.tid = slot;
              ins.target_float = node.type == ScalarType::Float32;
              ins.value = compile_to(*node.init, ins.target_float ? Ty::Float : Ty::Int,
                                     stmt.pos);
              emit(std::move(ins));
            }
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            lower_store(Ins::Op::Assign, node.target, *node.value, stmt.pos);
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            Ins branch;
            branch.op = Ins::Op::CondBrFalse;
            branch.pos = stmt.pos;
            branch.value = compile_to(*node.cond, Ty::Int, stmt.pos);
            int branch_at = here();
            emit(std::move(branch));
            lower_block(node.then_body);
            if (node.else_body) {
              Ins skip;
              skip.op = Ins::Op::Br;
              skip.pos = stmt.pos;
              int skip_at = here();
              emit(std::move(skip));
              out_.code[size_t(branch_at)].jump = here();
              lower_block(*node.else_body);
              out_.code[size_t(skip_at)].jump = here();
            } else {
              out_.code[size_t(branch_at)].jump = here();
            }
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            scopes_.emplace_back();
            lower_stmt(*node.init);
            int head = here();
            Ins branch;
            branch.op = Ins::Op::CondBrFalse;
            branch.pos = stmt.pos;
            branch.value = compile_to(*node.cond, Ty::Int, stmt.pos);
            int branch_at = here();
            emit(std::move(branch));
            lower_block(node.body);
            lower_stmt(*node.step);
            Ins back;
            back.op = Ins::Op::Br;
            back.pos = stmt.pos;
            back.jump = head;
            emit(std::move(back));
            out_.code[size_t(branch_at)].jump = here();
            scopes_.pop_back();
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            int head = here();
            Ins branch;
            branch.op = Ins::Op::CondBrFalse;
            branch.pos = stmt.pos;
            branch.value = compile_to(*node.cond, Ty::Int, stmt.pos);
            int branch_at = here();
            emit(std::move(branch));
            lower_block(node.body);
            Ins back;
            back.op = Ins::Op::Br;
            back.pos = stmt.pos;
            back.jump = head;
            emit(std::move(back));
            out_.code[size_t(branch_at)].jump = here();
          } else if constexpr (std::is_same_v<T, BarrierStmt>) {
            Ins ins;
            ins.op = Ins::Op::Barrier;
            ins.pos = stmt.pos;
            ins.barrier_id = 0;
            ins.barrier_count = -1;
            emit(std::move(ins));
          } else if constexpr (std::is_same_v<T, PartialBarrierStmt>) {
            if (node.id < 0 || node.id > 15)
              fail(ErrCode::BadBarrierId, "barrier id must be in [0, 15]", stmt.pos);
            if (node.count <= 0 || node.count % 32 != 0)
              fail(ErrCode::MisalignedCount,
                   "barrier count must be a positive multiple of 32", stmt.pos);
            Ins ins;
            ins.op = Ins::Op::Barrier;
            ins.pos = stmt.pos;
            ins.barrier_id = node.id;
            ins.barrier_count = node.count;
            emit(std::move(ins));
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            lower_store(Ins::Op::AtomicAdd, node.target, *node.value, stmt.pos);
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            if (node.value)
              fail(ErrCode::TypeMismatch, "kernels cannot return a value", stmt.pos);
            Ins ins;
            ins.op = Ins::Op::Return;
            ins.pos = stmt.pos;
            emit(std::move(ins));
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            fail(ErrCode::InvalidArgument, "calls must be inlined before simulation",
                 stmt.pos);
          } else if constexpr (std::is_same_v<T, LabelStmt>) {
            if (labels_.count(node.name))
              fail(ErrCode::DuplicateName, "duplicate label '" + node.name + "'", stmt.pos);
            labels_[node.name] = here();
          } else {
            static_assert(std::is_same_v<T, GotoStmt>);
            Ins ins;
            ins.op = Ins::Op::Br;
            ins.pos = stmt.pos;
            pending_gotos_.emplace_back(here(), node.label);
            emit(std::move(ins));
          }
        },
        stmt.node);
  }

  void lower_block(const StmtBlock& block) {
    scopes_.emplace_back();
    for (const auto& s : block.stmts) lower_stmt(s);
    scopes_.pop_back();
  }
};

}  // namespace

LoweredKernel lower_kernel(const Kernel& kernel) { return Lowerer(kernel).run(); }

}  // namespace mkfuse::simdetail
