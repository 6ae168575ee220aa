#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkfuse/ast.hpp"

namespace mkfuse::simdetail {

/// Postfix micro-operation of a compiled expression.
struct SOp {
  enum class K : uint8_t {
    PushInt,
    PushFloat,
    LoadLocal,    // a = slot
    LoadBuiltin,  // a = BuiltinVar
    LoadGlobal,   // a = array id; pops index
    LoadShared,   // a = shared id; pops index
    Un,
    Bin,
    CastIntToFloat,
    CastFloatToInt,
    MinOp,
    MaxOp,
    FmaxfOp,
    Shuffle,  // a = lane mask
  } k;
  int32_t a = 0;
  float f = 0.0f;
  UnaryOp uop = UnaryOp::Neg;
  BinaryOp bop = BinaryOp::Add;
  bool is_float = false;  // operand domain
  SourcePos pos;
};

/// One lowered instruction of the linear program.
struct Ins {
  enum class Op : uint8_t { Assign, AtomicAdd, Br, CondBrFalse, Barrier, Return } op;
  // Assign / AtomicAdd target
  enum class Target : uint8_t { Local, Shared, Global } tkind = Target::Local;
  int tid = -1;
  bool target_float = false;
  std::vector<SOp> index;  // element stores only
  std::vector<SOp> value;  // also the condition of CondBrFalse
  int jump = -1;
  int barrier_id = 0;
  int barrier_count = -1;  // -1: whole launched block
  SourcePos pos;
};

struct LocalInfo {
  std::string name;
  ScalarType type;
  bool is_param = false;
};

struct LoweredKernel {
  std::string kernel_name;
  Dim3 declared_dims;
  int grid_dim = 1;
  std::optional<int> meta_regs;
  std::vector<LocalInfo> locals;          // scalar params first, then declarations
  std::vector<SharedDecl> shared;
  std::vector<Param> global_params;       // array params, bound by name at launch
  std::vector<Ins> code;                  // ends with an implicit Return
  int max_stack = 1;

  int first_decl_slot() const {
    int i = 0;
    while (i < int(locals.size()) && locals[i].is_param) ++i;
    return i;
  }
};

/// Compiles a validated, call-free kernel body into the linear form.
LoweredKernel lower_kernel(const Kernel& kernel);

}  // namespace mkfuse::simdetail
