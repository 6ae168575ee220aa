#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mkfuse/error.hpp"

namespace mkfuse {

/// Deep-copying smart pointer used for recursive AST nodes.
template <typename T>
class box {
 public:
  box() = default;
  box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}
  box(const box& other) : ptr_(other.ptr_ ? std::make_unique<T>(*other.ptr_) : nullptr) {}
  box(box&&) noexcept = default;
  box& operator=(const box& other) {
    if (this != &other) ptr_ = other.ptr_ ? std::make_unique<T>(*other.ptr_) : nullptr;
    return *this;
  }
  box& operator=(box&&) noexcept = default;

  T& operator*() { return *ptr_; }
  const T& operator*() const { return *ptr_; }
  T* operator->() { return ptr_.get(); }
  const T* operator->() const { return ptr_.get(); }
  T* get() { return ptr_.get(); }
  const T* get() const { return ptr_.get(); }
  explicit operator bool() const { return static_cast<bool>(ptr_); }

 private:
  std::unique_ptr<T> ptr_;
};

enum class ScalarType : uint8_t { Int32, Float32 };

const char* to_string(ScalarType t);

enum class BinaryOp : uint8_t {
  Add, Sub, Mul, Div, Mod,
  Shl, Shr, BitAnd, BitXor, BitOr,
  Lt, Le, Gt, Ge, Eq, Ne,
  LogAnd, LogOr,
};

enum class UnaryOp : uint8_t { Neg, LogNot };

enum class BuiltinVar : uint8_t {
  ThreadIdxX, ThreadIdxY, ThreadIdxZ,
  BlockIdxX, BlockIdxY, BlockIdxZ,
  BlockDimX, BlockDimY, BlockDimZ,
  GridDimX,
};

/// Fixed builtin functions callable in expressions.
enum class Intrinsic : uint8_t { Min, Max, Fmaxf, CastInt, CastFloat };

struct Expr;

struct IntLit { int32_t value = 0; };
struct FloatLit { float value = 0.0f; };
struct VarRef { std::string name; };
struct BuiltinRef { BuiltinVar builtin; };
struct UnaryExpr { UnaryOp op; box<Expr> operand; };
struct BinaryExpr { BinaryOp op; box<Expr> lhs; box<Expr> rhs; };
/// 1-D element access on a named global/shared array.
struct IndexExpr { std::string array; box<Expr> index; };
struct IntrinsicCall { Intrinsic which; std::vector<Expr> args; };
/// warp_shfl_xor(value, lane_mask); the mask is a folded compile-time constant.
struct ShuffleXor { box<Expr> value; int lane_mask = 1; };
/// Call to a user device function (eliminated by inline_calls).
struct CallExpr { std::string callee; std::vector<Expr> args; };

struct Expr {
  SourcePos pos;
  std::variant<IntLit, FloatLit, VarRef, BuiltinRef, UnaryExpr, BinaryExpr,
               IndexExpr, IntrinsicCall, ShuffleXor, CallExpr> node;
};

struct Stmt;

struct StmtBlock {
  std::vector<Stmt> stmts;
};

/// Assignable location: scalar variable, or element of a named array.
struct LValue {
  SourcePos pos;
  std::string name;
  box<Expr> index;  // null => scalar variable
};

struct DeclStmt { ScalarType type; std::string name; box<Expr> init; };
struct AssignStmt { LValue target; box<Expr> value; };
struct IfStmt { box<Expr> cond; StmtBlock then_body; std::optional<StmtBlock> else_body; };
struct ForStmt { box<Stmt> init; box<Expr> cond; box<Stmt> step; StmtBlock body; };
struct WhileStmt { box<Expr> cond; StmtBlock body; };
/// Block-wide barrier (syncthreads()).
struct BarrierStmt {};
/// Named barrier releasing after `count` participating threads arrive.
struct PartialBarrierStmt { int id = 0; int count = 0; };
struct AtomicAddStmt { LValue target; box<Expr> value; };
struct ReturnStmt { box<Expr> value; };  // null for kernels / void functions
struct CallStmt { std::string callee; std::vector<Expr> args; };
struct LabelStmt { std::string name; };
struct GotoStmt { std::string label; };

struct Stmt {
  SourcePos pos;
  std::variant<DeclStmt, AssignStmt, IfStmt, ForStmt, WhileStmt, BarrierStmt,
               PartialBarrierStmt, AtomicAddStmt, ReturnStmt, CallStmt,
               LabelStmt, GotoStmt> node;
};

enum class ParamKind : uint8_t { ScalarInt, ScalarFloat, ArrayInt, ArrayFloat };

bool is_array_param(ParamKind k);
ScalarType param_elem_type(ParamKind k);

struct Param {
  std::string name;
  ParamKind kind;
  SourcePos pos;
};

struct SharedDecl {
  std::string name;
  ScalarType elem_type;
  int64_t length = 0;
  SourcePos pos;
};

struct Dim3 {
  int x = 1, y = 1, z = 1;
  int64_t count() const { return int64_t(x) * y * z; }
  bool operator==(const Dim3&) const = default;
};

/// Metadata from `//@ key=value` annotations preceding a kernel.
struct KernelMeta {
  int grid_dim = 1;
  std::optional<int> regs;     // overrides estimate_registers
  std::optional<int> regcap;   // recorded register cap for launching
};

struct Kernel {
  std::string name;
  std::vector<Param> params;
  Dim3 block_dims;
  bool tunable = true;  // `fixed` keyword absent
  std::vector<SharedDecl> shared_decls;
  StmtBlock body;
  KernelMeta meta;
  SourcePos pos;
};

struct FuncDef {
  std::string name;
  std::optional<ScalarType> return_type;  // nullopt => void
  std::vector<Param> params;
  StmtBlock body;
  SourcePos pos;
};

struct Program {
  std::vector<FuncDef> functions;
  std::vector<Kernel> kernels;

  const FuncDef* find_function(const std::string& name) const;
  const Kernel* find_kernel(const std::string& name) const;
};

// Position-insensitive structural equality.
bool ast_equal(const Expr& a, const Expr& b);
bool ast_equal(const Stmt& a, const Stmt& b);
bool ast_equal(const StmtBlock& a, const StmtBlock& b);
bool ast_equal(const Kernel& a, const Kernel& b);
bool ast_equal(const Program& a, const Program& b);

// Small builders used by transforms and tests.
Expr make_int(int32_t v);
Expr make_float(float v);
Expr make_var(std::string name);
Expr make_builtin(BuiltinVar b);
Expr make_unary(UnaryOp op, Expr operand);
Expr make_binary(BinaryOp op, Expr lhs, Expr rhs);
Expr make_index(std::string array, Expr index);
Stmt make_decl(ScalarType t, std::string name);
Stmt make_decl_init(ScalarType t, std::string name, Expr init);
Stmt make_assign(std::string name, Expr value);
Stmt make_assign_index(std::string array, Expr index, Expr value);
Stmt make_if(Expr cond, StmtBlock then_body);
Stmt make_if_else(Expr cond, StmtBlock then_body, StmtBlock else_body);

/// Pre-order walk over every statement, recursing into nested blocks.
void for_each_stmt(const StmtBlock& block, const std::function<void(const Stmt&)>& fn);
void for_each_stmt(StmtBlock& block, const std::function<void(Stmt&)>& fn);
/// Visits every expression of a statement (not recursing into nested blocks).
void for_each_expr_shallow(const Stmt& stmt, const std::function<void(const Expr&)>& fn);
void for_each_expr_shallow(Stmt& stmt, const std::function<void(Expr&)>& fn);
/// Recursive walk over an expression tree (pre-order).
void for_each_subexpr(const Expr& expr, const std::function<void(const Expr&)>& fn);
void for_each_subexpr(Expr& expr, const std::function<void(Expr&)>& fn);

}  // namespace mkfuse
