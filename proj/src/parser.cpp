#include <cstdlib>
#include <optional>
#include <sstream>

#include "lexer.hpp"
#include "mkfuse/frontend.hpp"

namespace mkfuse {

namespace {

std::optional<int32_t> fold_const_int(const Expr& e);

std::optional<int32_t> fold_binary(BinaryOp op, int32_t a, int32_t b) {
  auto wrap = [](int64_t v) { return static_cast<int32_t>(static_cast<uint32_t>(v)); };
  switch (op) {
    case BinaryOp::Add: return wrap(int64_t(a) + b);
    case BinaryOp::Sub: return wrap(int64_t(a) - b);
    case BinaryOp::Mul: return wrap(int64_t(a) * b);
    case BinaryOp::Div:
      if (b == 0) return std::nullopt;
      return wrap(int64_t(a) / b);
    case BinaryOp::Mod:
      if (b == 0) return std::nullopt;
      return wrap(int64_t(a) % b);
    case BinaryOp::Shl: return wrap(int64_t(uint32_t(a) << (uint32_t(b) & 31)));
    case BinaryOp::Shr: return a >> (uint32_t(b) & 31);
    case BinaryOp::BitAnd: return a & b;
    case BinaryOp::BitXor: return a ^ b;
    case BinaryOp::BitOr: return a | b;
    default: return std::nullopt;
  }
}

std::optional<int32_t> fold_const_int(const Expr& e) {
  if (const auto* lit = std::get_if<IntLit>(&e.node)) return lit->value;
  if (const auto* un = std::get_if<UnaryExpr>(&e.node)) {
    if (un->op == UnaryOp::Neg) {
      if (auto v = fold_const_int(*un->operand))
        return static_cast<int32_t>(-static_cast<int64_t>(*v));
    }
    return std::nullopt;
  }
  if (const auto* bin = std::get_if<BinaryExpr>(&e.node)) {
    auto l = fold_const_int(*bin->lhs);
    auto r = fold_const_int(*bin->rhs);
    if (l && r) return fold_binary(bin->op, *l, *r);
  }
  return std::nullopt;
}

class Parser {
 public:
  explicit Parser(const std::string& source) : toks_(lex(source)) {}

  Program parse() {
    Program program;
    std::vector<Token> pending_annotations;
    while (!at(Tok::End)) {
      if (at(Tok::Annotation)) {
        pending_annotations.push_back(advance());
        continue;
      }
      if (at(Tok::KwKernel)) {
        program.kernels.push_back(parse_kernel(pending_annotations));
        pending_annotations.clear();
      } else if (at(Tok::KwInt) || at(Tok::KwFloat) || at(Tok::KwVoid)) {
        if (!pending_annotations.empty())
          fail(ErrCode::Syntax, "annotation must precede a kernel definition",
               pending_annotations.front().pos);
        program.functions.push_back(parse_function());
      } else {
        err_expected("'kernel' or a function definition");
      }
    }
    if (!pending_annotations.empty())
      fail(ErrCode::Syntax, "annotation is not followed by a kernel definition",
           pending_annotations.front().pos);
    return program;
  }

 private:
  std::vector<Token> toks_;
  size_t idx_ = 0;

  const Token& peek(size_t off = 0) const {
    size_t i = idx_ + off;
    return i < toks_.size() ? toks_[i] : toks_.back();
  }
  bool at(Tok kind, size_t off = 0) const { return peek(off).kind == kind; }
  Token advance() { return toks_[idx_ < toks_.size() - 1 ? idx_++ : idx_]; }

  [[noreturn]] void err_expected(const std::string& what) const {
    fail(ErrCode::Syntax, "expected " + what + ", found " + tok_name(peek().kind), peek().pos);
  }

  Token expect(Tok kind) {
    if (!at(kind)) err_expected(tok_name(kind));
    return advance();
  }

  int expect_int_lit() {
    Token t = expect(Tok::IntLit);
    return t.int_value;
  }

  // ---- annotations -------------------------------------------------------

  void apply_annotations(const std::vector<Token>& annotations, KernelMeta& meta) {
    for (const auto& ann : annotations) {
      std::istringstream in(ann.text);
      std::string item;
      while (in >> item) {
        auto eq = item.find('=');
        if (eq == std::string::npos)
          fail(ErrCode::Syntax, "annotation entry '" + item + "' is not key=value", ann.pos);
        std::string key = item.substr(0, eq);
        std::string value = item.substr(eq + 1);
        char* end = nullptr;
        long v = std::strtol(value.c_str(), &end, 10);
        if (end == value.c_str() || *end != '\0' || v <= 0)
          fail(ErrCode::Syntax, "annotation '" + key + "' needs a positive integer", ann.pos);
        if (key == "grid") {
          meta.grid_dim = static_cast<int>(v);
        } else if (key == "regs") {
          meta.regs = static_cast<int>(v);
        } else if (key == "regcap") {
          meta.regcap = static_cast<int>(v);
        } else {
          fail(ErrCode::Syntax, "unknown annotation key '" + key + "'", ann.pos);
        }
      }
    }
  }

  // ---- definitions -------------------------------------------------------

  std::vector<Param> parse_params() {
    std::vector<Param> params;
    expect(Tok::LParen);
    if (!at(Tok::RParen)) {
      while (true) {
        if (!at(Tok::KwInt) && !at(Tok::KwFloat)) err_expected("parameter type");
        bool is_int = at(Tok::KwInt);
        advance();
        Token name = expect(Tok::Ident);
        bool array = false;
        if (at(Tok::LBracket)) {
          advance();
          expect(Tok::RBracket);
          array = true;
        }
        ParamKind kind = array ? (is_int ? ParamKind::ArrayInt : ParamKind::ArrayFloat)
                               : (is_int ? ParamKind::ScalarInt : ParamKind::ScalarFloat);
        params.push_back(Param{name.text, kind, name.pos});
        if (at(Tok::Comma)) {
          advance();
          continue;
        }
        break;
      }
    }
    expect(Tok::RParen);
    return params;
  }

  Kernel parse_kernel(const std::vector<Token>& annotations) {
    Kernel kernel;
    kernel.pos = expect(Tok::KwKernel).pos;
    kernel.name = expect(Tok::Ident).text;
    kernel.params = parse_params();
    expect(Tok::KwDims);
    expect(Tok::LParen);
    kernel.block_dims.x = expect_int_lit();
    expect(Tok::Comma);
    kernel.block_dims.y = expect_int_lit();
    expect(Tok::Comma);
    kernel.block_dims.z = expect_int_lit();
    expect(Tok::RParen);
    if (at(Tok::KwFixed)) {
      advance();
      kernel.tunable = false;
    }
    apply_annotations(annotations, kernel.meta);
    kernel.body = parse_block(&kernel.shared_decls);
    return kernel;
  }

  FuncDef parse_function() {
    FuncDef fn;
    Token type_tok = advance();
    fn.pos = type_tok.pos;
    if (type_tok.kind == Tok::KwInt)
      fn.return_type = ScalarType::Int32;
    else if (type_tok.kind == Tok::KwFloat)
      fn.return_type = ScalarType::Float32;
    fn.name = expect(Tok::Ident).text;
    fn.params = parse_params();
    fn.body = parse_block(nullptr);
    return fn;
  }

  // ---- statements --------------------------------------------------------

  StmtBlock parse_block(std::vector<SharedDecl>* shared_sink) {
    expect(Tok::LBrace);
    StmtBlock block;
    while (!at(Tok::RBrace)) {
      if (at(Tok::End)) err_expected("'}'");
      if (at(Tok::KwShared)) {
        SourcePos pos = advance().pos;
        if (shared_sink == nullptr)
          fail(ErrCode::Syntax, "shared declarations are only allowed at kernel top level",
               pos);
        SharedDecl decl;
        decl.pos = pos;
        if (!at(Tok::KwInt) && !at(Tok::KwFloat)) err_expected("'int' or 'float'");
        decl.elem_type = at(Tok::KwInt) ? ScalarType::Int32 : ScalarType::Float32;
        advance();
        decl.name = expect(Tok::Ident).text;
        expect(Tok::LBracket);
        decl.length = expect_int_lit();
        expect(Tok::RBracket);
        expect(Tok::Semi);
        if (decl.length <= 0)
          fail(ErrCode::Syntax, "shared array length must be positive", pos);
        shared_sink->push_back(std::move(decl));
        continue;
      }
      block.stmts.push_back(parse_stmt());
    }
    expect(Tok::RBrace);
    return block;
  }

  Stmt parse_stmt() {
    SourcePos pos = peek().pos;
    switch (peek().kind) {
      case Tok::KwInt:
      case Tok::KwFloat: {
        Stmt s = parse_decl();
        expect(Tok::Semi);
        return s;
      }
      case Tok::KwIf: {
        advance();
        expect(Tok::LParen);
        Expr cond = parse_expr();
        expect(Tok::RParen);
        StmtBlock then_body = parse_block(nullptr);
        std::optional<StmtBlock> else_body;
        if (at(Tok::KwElse)) {
          advance();
          else_body = parse_block(nullptr);
        }
        return Stmt{pos, IfStmt{box<Expr>(std::move(cond)), std::move(then_body),
                                std::move(else_body)}};
      }
      case Tok::KwFor: {
        advance();
        expect(Tok::LParen);
        Stmt init = parse_simple_stmt();
        expect(Tok::Semi);
        Expr cond = parse_expr();
        expect(Tok::Semi);
        Stmt step = parse_simple_stmt();
        expect(Tok::RParen);
        StmtBlock body = parse_block(nullptr);
        return Stmt{pos, ForStmt{box<Stmt>(std::move(init)), box<Expr>(std::move(cond)),
                                 box<Stmt>(std::move(step)), std::move(body)}};
      }
      case Tok::KwWhile: {
        advance();
        expect(Tok::LParen);
        Expr cond = parse_expr();
        expect(Tok::RParen);
        StmtBlock body = parse_block(nullptr);
        return Stmt{pos, WhileStmt{box<Expr>(std::move(cond)), std::move(body)}};
      }
      case Tok::KwSyncthreads: {
        advance();
        expect(Tok::LParen);
        expect(Tok::RParen);
        expect(Tok::Semi);
        return Stmt{pos, BarrierStmt{}};
      }
      case Tok::KwBarSync: {
        advance();
        expect(Tok::LParen);
        int id = expect_int_lit();
        expect(Tok::Comma);
        int count = expect_int_lit();
        expect(Tok::RParen);
        expect(Tok::Semi);
        if (id < 0 || id > 15) fail(ErrCode::BadBarrierId, "barrier id must be in [0, 15]", pos);
        if (count <= 0 || count % 32 != 0)
          fail(ErrCode::MisalignedCount, "barrier count must be a positive multiple of 32", pos);
        return Stmt{pos, PartialBarrierStmt{id, count}};
      }
      case Tok::KwAtomicAdd: {
        advance();
        expect(Tok::LParen);
        LValue target = parse_lvalue();
        expect(Tok::Comma);
        Expr value = parse_expr();
        expect(Tok::RParen);
        expect(Tok::Semi);
        return Stmt{pos, AtomicAddStmt{std::move(target), box<Expr>(std::move(value))}};
      }
      case Tok::KwGoto: {
        advance();
        Token label = expect(Tok::Ident);
        expect(Tok::Semi);
        return Stmt{pos, GotoStmt{label.text}};
      }
      case Tok::KwReturn: {
        advance();
        ReturnStmt ret;
        if (!at(Tok::Semi)) ret.value = box<Expr>(parse_expr());
        expect(Tok::Semi);
        return Stmt{pos, std::move(ret)};
      }
      case Tok::Ident: {
        if (at(Tok::Colon, 1)) {
          Token label = advance();
          advance();  // ':'
          return Stmt{pos, LabelStmt{label.text}};
        }
        if (at(Tok::LParen, 1)) {
          Token callee = advance();
          CallStmt call{callee.text, parse_args()};
          expect(Tok::Semi);
          return Stmt{pos, std::move(call)};
        }
        Stmt s = parse_assignment();
        expect(Tok::Semi);
        return s;
      }
      default:
        err_expected("a statement");
    }
  }

  /// decl or assignment or call, no trailing ';' (for-loop header item).
  Stmt parse_simple_stmt() {
    if (at(Tok::KwInt) || at(Tok::KwFloat)) return parse_decl();
    if (at(Tok::Ident) && at(Tok::LParen, 1)) {
      SourcePos pos = peek().pos;
      Token callee = advance();
      return Stmt{pos, CallStmt{callee.text, parse_args()}};
    }
    return parse_assignment();
  }

  Stmt parse_decl() {
    SourcePos pos = peek().pos;
    ScalarType type = at(Tok::KwInt) ? ScalarType::Int32 : ScalarType::Float32;
    advance();
    Token name = expect(Tok::Ident);
    DeclStmt decl{type, name.text, {}};
    if (at(Tok::Assign)) {
      advance();
      decl.init = box<Expr>(parse_expr());
    }
    return Stmt{pos, std::move(decl)};
  }

  Stmt parse_assignment() {
    SourcePos pos = peek().pos;
    LValue target = parse_lvalue();
    expect(Tok::Assign);
    Expr value = parse_expr();
    return Stmt{pos, AssignStmt{std::move(target), box<Expr>(std::move(value))}};
  }

  LValue parse_lvalue() {
    Token name = expect(Tok::Ident);
    LValue lv;
    lv.pos = name.pos;
    lv.name = name.text;
    if (at(Tok::LBracket)) {
      advance();
      lv.index = box<Expr>(parse_expr());
      expect(Tok::RBracket);
    }
    return lv;
  }

  std::vector<Expr> parse_args() {
    expect(Tok::LParen);
    std::vector<Expr> args;
    if (!at(Tok::RParen)) {
      while (true) {
        args.push_back(parse_expr());
        if (at(Tok::Comma)) {
          advance();
          continue;
        }
        break;
      }
    }
    expect(Tok::RParen);
    return args;
  }

  // ---- expressions -------------------------------------------------------

  static int binary_prec(Tok t) {
    switch (t) {
      case Tok::OrOr: return 1;
      case Tok::AndAnd: return 2;
      case Tok::Pipe: return 3;
      case Tok::Caret: return 4;
      case Tok::Amp: return 5;
      case Tok::EqEq:
      case Tok::Ne: return 6;
      case Tok::Lt:
      case Tok::Le:
      case Tok::Gt:
      case Tok::Ge: return 7;
      case Tok::Shl:
      case Tok::Shr: return 8;
      case Tok::Plus:
      case Tok::Minus: return 9;
      case Tok::Star:
      case Tok::Slash:
      case Tok::Percent: return 10;
      default: return -1;
    }
  }

  static BinaryOp binary_op(Tok t) {
    switch (t) {
      case Tok::OrOr: return BinaryOp::LogOr;
      case Tok::AndAnd: return BinaryOp::LogAnd;
      case Tok::Pipe: return BinaryOp::BitOr;
      case Tok::Caret: return BinaryOp::BitXor;
      case Tok::Amp: return BinaryOp::BitAnd;
      case Tok::EqEq: return BinaryOp::Eq;
      case Tok::Ne: return BinaryOp::Ne;
      case Tok::Lt: return BinaryOp::Lt;
      case Tok::Le: return BinaryOp::Le;
      case Tok::Gt: return BinaryOp::Gt;
      case Tok::Ge: return BinaryOp::Ge;
      case Tok::Shl: return BinaryOp::Shl;
      case Tok::Shr: return BinaryOp::Shr;
      case Tok::Plus: return BinaryOp::Add;
      case Tok::Minus: return BinaryOp::Sub;
      case Tok::Star: return BinaryOp::Mul;
      case Tok::Slash: return BinaryOp::Div;
      default: return BinaryOp::Mod;
    }
  }

  Expr parse_expr() { return parse_binary(1); }

  Expr parse_binary(int min_prec) {
    Expr lhs = parse_unary();
    while (true) {
      int prec = binary_prec(peek().kind);
      if (prec < min_prec) return lhs;
      Token op = advance();
      Expr rhs = parse_binary(prec + 1);  // all binary operators are left-associative
      Expr combined{op.pos, BinaryExpr{binary_op(op.kind), box<Expr>(std::move(lhs)),
                                       box<Expr>(std::move(rhs))}};
      lhs = std::move(combined);
    }
  }

  Expr parse_unary() {
    if (at(Tok::Minus)) {
      SourcePos pos = advance().pos;
      return Expr{pos, UnaryExpr{UnaryOp::Neg, box<Expr>(parse_unary())}};
    }
    if (at(Tok::Bang)) {
      SourcePos pos = advance().pos;
      return Expr{pos, UnaryExpr{UnaryOp::LogNot, box<Expr>(parse_unary())}};
    }
    return parse_primary();
  }

  static std::optional<BuiltinVar> builtin_member(const std::string& base, const std::string& member) {
    int axis = member == "x" ? 0 : member == "y" ? 1 : member == "z" ? 2 : -1;
    if (axis < 0) return std::nullopt;
    if (base == "threadIdx")
      return static_cast<BuiltinVar>(static_cast<int>(BuiltinVar::ThreadIdxX) + axis);
    if (base == "blockIdx")
      return static_cast<BuiltinVar>(static_cast<int>(BuiltinVar::BlockIdxX) + axis);
    if (base == "blockDim")
      return static_cast<BuiltinVar>(static_cast<int>(BuiltinVar::BlockDimX) + axis);
    if (base == "gridDim" && axis == 0) return BuiltinVar::GridDimX;
    return std::nullopt;
  }

  Expr parse_primary() {
    SourcePos pos = peek().pos;
    switch (peek().kind) {
      case Tok::IntLit: {
        Token t = advance();
        return Expr{pos, IntLit{t.int_value}};
      }
      case Tok::FloatLit: {
        Token t = advance();
        return Expr{pos, FloatLit{t.float_value}};
      }
      case Tok::LParen: {
        advance();
        Expr inner = parse_expr();
        expect(Tok::RParen);
        return inner;
      }
      case Tok::KwInt:
      case Tok::KwFloat: {
        Intrinsic which = at(Tok::KwInt) ? Intrinsic::CastInt : Intrinsic::CastFloat;
        advance();
        std::vector<Expr> args = parse_args();
        if (args.size() != 1) fail(ErrCode::Syntax, "cast takes exactly one argument", pos);
        return Expr{pos, IntrinsicCall{which, std::move(args)}};
      }
      case Tok::Ident: {
        Token name = advance();
        if (at(Tok::Dot)) {
          advance();
          Token member = expect(Tok::Ident);
          auto builtin = builtin_member(name.text, member.text);
          if (!builtin)
            fail(ErrCode::Syntax, "unknown builtin '" + name.text + "." + member.text + "'",
                 pos);
          return Expr{pos, BuiltinRef{*builtin}};
        }
        if (at(Tok::LParen)) {
          if (name.text == "warp_shfl_xor") {
            std::vector<Expr> args = parse_args();
            if (args.size() != 2)
              fail(ErrCode::Syntax, "warp_shfl_xor takes (value, lane_mask)", pos);
            auto mask = fold_const_int(args[1]);
            if (!mask || *mask < 1 || *mask > 31)
              fail(ErrCode::TypeMismatch,
                   "warp_shfl_xor lane_mask must be a compile-time constant in [1, 31]", pos);
            return Expr{pos, ShuffleXor{box<Expr>(std::move(args[0])), *mask}};
          }
          if (name.text == "min" || name.text == "max" || name.text == "fmaxf") {
            Intrinsic which = name.text == "min"   ? Intrinsic::Min
                              : name.text == "max" ? Intrinsic::Max
                                                   : Intrinsic::Fmaxf;
            std::vector<Expr> args = parse_args();
            if (args.size() != 2)
              fail(ErrCode::Syntax, name.text + " takes exactly two arguments", pos);
            return Expr{pos, IntrinsicCall{which, std::move(args)}};
          }
          return Expr{pos, CallExpr{name.text, parse_args()}};
        }
        if (at(Tok::LBracket)) {
          advance();
          Expr index = parse_expr();
          expect(Tok::RBracket);
          return Expr{pos, IndexExpr{name.text, box<Expr>(std::move(index))}};
        }
        return Expr{pos, VarRef{name.text}};
      }
      default:
        err_expected("an expression");
    }
  }
};

}  // namespace

Program parse_program_unchecked(const std::string& source) {
  return Parser(source).parse();
}

Program parse_program(const std::string& source) {
  Program program = parse_program_unchecked(source);
  validate_program(program);
  return program;
}

}  // namespace mkfuse
