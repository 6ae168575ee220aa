#include <cstdio>
#include <sstream>

#include "mkfuse/frontend.hpp"

namespace mkfuse {

namespace {

const char* binary_op_text(BinaryOp op) {
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

int binary_op_prec(BinaryOp op) {
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
    default: return 10;  // Mul / Div / Mod
  }
}

constexpr int kUnaryPrec = 11;

const char* builtin_text(BuiltinVar b) {
  switch (b) {
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
}

std::string float_text(float v) {
  // shortest representation that round-trips a float32
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  std::string s(buf);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
    s += ".0";
  return s;
}

class Printer {
 public:
  std::string take() { return std::move(out_); }

  void expr(const Expr& e, int parent_prec = 0) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, IntLit>) {
            out_ += std::to_string(node.value);
          } else if constexpr (std::is_same_v<T, FloatLit>) {
            out_ += float_text(node.value);
          } else if constexpr (std::is_same_v<T, VarRef>) {
            out_ += node.name;
          } else if constexpr (std::is_same_v<T, BuiltinRef>) {
            out_ += builtin_text(node.builtin);
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            bool parens = kUnaryPrec < parent_prec;
            if (parens) out_ += '(';
            out_ += node.op == UnaryOp::Neg ? '-' : '!';
            expr(*node.operand, kUnaryPrec);
            if (parens) out_ += ')';
          } else if constexpr (std::is_same_v<T, BinaryExpr>) {
            int prec = binary_op_prec(node.op);
            bool parens = prec < parent_prec;
            if (parens) out_ += '(';
            expr(*node.lhs, prec);
            out_ += ' ';
            out_ += binary_op_text(node.op);
            out_ += ' ';
            expr(*node.rhs, prec + 1);  // left-associative
            if (parens) out_ += ')';
          } else if constexpr (std::is_same_v<T, IndexExpr>) {
            out_ += node.array;
            out_ += '[';
            expr(*node.index);
            out_ += ']';
          } else if constexpr (std::is_same_v<T, IntrinsicCall>) {
            switch (node.which) {
              case Intrinsic::Min: out_ += "min"; break;
              case Intrinsic::Max: out_ += "max"; break;
              case Intrinsic::Fmaxf: out_ += "fmaxf"; break;
              case Intrinsic::CastInt: out_ += "int"; break;
              case Intrinsic::CastFloat: out_ += "float"; break;
            }
            args(node.args);
          } else if constexpr (std::is_same_v<T, ShuffleXor>) {
            out_ += "warp_shfl_xor(";
            expr(*node.value);
            out_ += ", " + std::to_string(node.lane_mask) + ")";
          } else {
            static_assert(std::is_same_v<T, CallExpr>);
            out_ += node.callee;
            args(node.args);
          }
        },
        e.node);
  }

  void lvalue(const LValue& lv) {
    out_ += lv.name;
    if (lv.index) {
      out_ += '[';
      expr(*lv.index);
      out_ += ']';
    }
  }

  void stmt(const Stmt& s, int indent) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            pad(indent);
            simple_decl(node);
            out_ += ";\n";
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            pad(indent);
            simple_assign(node);
            out_ += ";\n";
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            pad(indent);
            out_ += "if (";
            expr(*node.cond);
            out_ += ") ";
            block(node.then_body, indent);
            if (node.else_body) {
              out_ += " else ";
              block(*node.else_body, indent);
            }
            out_ += '\n';
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            pad(indent);
            out_ += "for (";
            simple_stmt(*node.init);
            out_ += "; ";
            expr(*node.cond);
            out_ += "; ";
            simple_stmt(*node.step);
            out_ += ") ";
            block(node.body, indent);
            out_ += '\n';
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            pad(indent);
            out_ += "while (";
            expr(*node.cond);
            out_ += ") ";
            block(node.body, indent);
            out_ += '\n';
          } else if constexpr (std::is_same_v<T, BarrierStmt>) {
            pad(indent);
            out_ += "syncthreads();\n";
          } else if constexpr (std::is_same_v<T, PartialBarrierStmt>) {
            pad(indent);
            out_ += "bar_sync(" + std::to_string(node.id) + ", " +
                    std::to_string(node.count) + ");\n";
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            pad(indent);
            out_ += "atomic_add(";
            lvalue(node.target);
            out_ += ", ";
            expr(*node.value);
            out_ += ");\n";
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            pad(indent);
            out_ += "return";
            if (node.value) {
              out_ += ' ';
              expr(*node.value);
            }
            out_ += ";\n";
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            pad(indent);
            out_ += node.callee;
            args(node.args);
            out_ += ";\n";
          } else if constexpr (std::is_same_v<T, LabelStmt>) {
            pad(indent);
            out_ += node.name + ":\n";
          } else {
            static_assert(std::is_same_v<T, GotoStmt>);
            pad(indent);
            out_ += "goto " + node.label + ";\n";
          }
        },
        s.node);
  }

  void block(const StmtBlock& b, int indent) {
    out_ += "{\n";
    for (const auto& s : b.stmts) stmt(s, indent + 1);
    pad(indent);
    out_ += "}";
  }

  void kernel(const Kernel& k) {
    annotation_line(k.meta);
    out_ += "kernel " + k.name + "(";
    params(k.params);
    out_ += ") dims (" + std::to_string(k.block_dims.x) + ", " +
            std::to_string(k.block_dims.y) + ", " + std::to_string(k.block_dims.z) + ")";
    if (!k.tunable) out_ += " fixed";
    out_ += " {\n";
    for (const auto& sh : k.shared_decls) {
      pad(1);
      out_ += std::string("shared ") + to_string(sh.elem_type) + " " + sh.name + "[" +
              std::to_string(sh.length) + "];\n";
    }
    for (const auto& s : k.body.stmts) stmt(s, 1);
    out_ += "}\n";
  }

  void function(const FuncDef& f) {
    out_ += f.return_type ? to_string(*f.return_type) : "void";
    out_ += " " + f.name + "(";
    params(f.params);
    out_ += ") ";
    block(f.body, 0);
    out_ += '\n';
  }

 private:
  std::string out_;

  void pad(int indent) { out_.append(static_cast<size_t>(indent) * 2, ' '); }

  void args(const std::vector<Expr>& list) {
    out_ += '(';
    for (size_t i = 0; i < list.size(); ++i) {
      if (i) out_ += ", ";
      expr(list[i]);
    }
    out_ += ')';
  }

  void params(const std::vector<Param>& list) {
    for (size_t i = 0; i < list.size(); ++i) {
      if (i) out_ += ", ";
      const Param& p = list[i];
      out_ += to_string(param_elem_type(p.kind));
      out_ += " " + p.name;
      if (is_array_param(p.kind)) out_ += "[]";
    }
  }

  void simple_decl(const DeclStmt& d) {
    out_ += std::string(to_string(d.type)) + " " + d.name;
    if (d.init) {
      out_ += " = ";
      expr(*d.init);
    }
  }

  void simple_assign(const AssignStmt& a) {
    lvalue(a.target);
    out_ += " = ";
    expr(*a.value);
  }

  void simple_stmt(const Stmt& s) {
    if (const auto* decl = std::get_if<DeclStmt>(&s.node)) {
      simple_decl(*decl);
    } else if (const auto* assign = std::get_if<AssignStmt>(&s.node)) {
      simple_assign(*assign);
    } else if (const auto* call = std::get_if<CallStmt>(&s.node)) {
      out_ += call->callee;
      args(call->args);
    } else {
      fail(ErrCode::InvalidArgument, "loop header holds a non-simple statement", s.pos);
    }
  }

  void annotation_line(const KernelMeta& meta) {
    std::string items;
    if (meta.grid_dim != 1) items += " grid=" + std::to_string(meta.grid_dim);
    if (meta.regs) items += " regs=" + std::to_string(*meta.regs);
    if (meta.regcap) items += " regcap=" + std::to_string(*meta.regcap);
    if (!items.empty()) out_ += "//@" + items + "\n";
  }
};

}  // namespace

std::string emit_expr(const Expr& expr) {
  Printer p;
  p.expr(expr);
  return p.take();
}

std::string emit_minikernel(const Kernel& kernel) {
  Printer p;
  p.kernel(kernel);
  return p.take();
}

std::string emit_minikernel(const Program& program) {
  std::string out;
  bool first = true;
  for (const auto& fn : program.functions) {
    if (!first) out += '\n';
    first = false;
    Printer p;
    p.function(fn);
    out += p.take();
  }
  for (const auto& k : program.kernels) {
    if (!first) out += '\n';
    first = false;
    out += emit_minikernel(k);
  }
  return out;
}

}  // namespace mkfuse
