#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "mkfuse/sim.hpp"
#include "sim_internal.hpp"

namespace mkfuse {

using namespace simdetail;

namespace {

constexpr int kEndPc = std::numeric_limits<int>::max();
constexpr int64_t kNever = std::numeric_limits<int64_t>::max() / 4;

union Value {
  int32_t i;
  float f;
};

// Wrapping int32 arithmetic keeps digests platform-stable.
int32_t wrap_add(int32_t a, int32_t b) { return int32_t(uint32_t(a) + uint32_t(b)); }
int32_t wrap_sub(int32_t a, int32_t b) { return int32_t(uint32_t(a) - uint32_t(b)); }
int32_t wrap_mul(int32_t a, int32_t b) { return int32_t(uint32_t(a) * uint32_t(b)); }

int32_t checked_div(int32_t a, int32_t b, SourcePos pos) {
  if (b == 0) fail(ErrCode::DivideByZero, "integer division by zero", pos);
  if (a == std::numeric_limits<int32_t>::min() && b == -1) return a;
  return a / b;
}

int32_t checked_mod(int32_t a, int32_t b, SourcePos pos) {
  if (b == 0) fail(ErrCode::DivideByZero, "integer modulo by zero", pos);
  if (a == std::numeric_limits<int32_t>::min() && b == -1) return 0;
  return a % b;
}

int32_t float_to_int(float x) {
  if (std::isnan(x)) return 0;
  double t = std::trunc(double(x));
  if (t >= 9.2e18) return int32_t(uint32_t(uint64_t(std::numeric_limits<int64_t>::max())));
  if (t <= -9.2e18) return int32_t(uint32_t(uint64_t(std::numeric_limits<int64_t>::min())));
  return int32_t(uint32_t(uint64_t(int64_t(t))));
}

enum class MicroClass : uint8_t {
  Compute,
  Shuffle,
  MemLoad,
  Atomic,
  StoreFire,
  SpillLoad,
  SpillStore,
};

bool uses_mem_slot(MicroClass c) {
  return c == MicroClass::MemLoad || c == MicroClass::Atomic || c == MicroClass::StoreFire ||
         c == MicroClass::SpillLoad || c == MicroClass::SpillStore;
}

enum class Reason : uint8_t { None, ExecDep, Memory, Barrier, Saturated };

struct BarrierSpot {
  int arrived = 0;
  std::vector<int> waiting;  // warp indices (executor-wide)
};

struct Block {
  int block_idx = 0;
  int nthreads = 0;
  std::vector<Value> locals;               // nthreads * nlocals
  std::vector<std::vector<Value>> shared;  // zero-initialized per block
  std::array<BarrierSpot, 16> barriers;
  int warps_done = 0;
  int warp_count = 0;
};

struct Warp {
  int block_slot = -1;  // index into resident block vector
  int warp_in_block = 0;
  std::array<int, 32> pc{};
  uint32_t live = 0;
  bool barrier_wait = false;
  bool exited = false;  // all lanes returned
  bool done = false;    // exited and (timed) micro queue drained
  // timed state
  int64_t ready = 0;
  Reason reason = Reason::None;
  const std::vector<MicroClass>* micro = nullptr;
  size_t micro_idx = 0;
};

class Exec {
 public:
  Exec(const LoweredKernel& lk, const LaunchConfig& launch, const SMConfig* sm,
       MemoryImage image, int reg_estimate = 0)
      : lk_(lk), launch_(launch), sm_(sm), image_(std::move(image)),
        reg_estimate_(reg_estimate) {
    nthreads_ = int(launch.block_dims.count());
    warps_per_block_ = (nthreads_ + 31) / 32;
    bind();
    compute_spills();
    build_micro_lists();
    stack_.assign(size_t(lk_.max_stack) + 2, {});
  }

  MemoryImage take_image() { return std::move(image_); }

  DeadlockReport* capture = nullptr;

  // ---- functional mode ---------------------------------------------------

  void run_functional() {
    for (int b = 0; b < launch_.grid_dim; ++b) {
      blocks_.clear();
      warps_.clear();
      spawn_block(b);
      while (true) {
        bool progressed = false;
        bool all_done = true;
        for (auto& w : warps_) {
          if (w.done) continue;
          all_done = false;
          if (w.barrier_wait) continue;
          commit(w);
          if (w.exited) w.done = true;
          progressed = true;
        }
        if (all_done) break;
        if (!progressed) {
          report_deadlock();
          return;
        }
      }
    }
  }

  // ---- timed mode ---------------------------------------------------------

  ProfileResult run_timed(int blocks_per_sm) {
    const SMConfig& sm = *sm_;
    ProfileResult total;
    int64_t weight_sum = 0;
    double util_acc = 0, mem_acc = 0, occ_acc = 0;
    for (int s = 0; s < sm.num_sms; ++s) {
      std::vector<int> block_list;
      for (int b = s; b < launch_.grid_dim; b += sm.num_sms) block_list.push_back(b);
      if (block_list.empty()) continue;
      ProfileResult r = run_one_sm(block_list, blocks_per_sm);
      total.elapsed_cycles = std::max(total.elapsed_cycles, r.elapsed_cycles);
      total.spill_loads_stores += r.spill_loads_stores;
      util_acc += r.issue_slot_utilization * double(r.elapsed_cycles);
      mem_acc += r.meminst_stall_fraction * double(r.elapsed_cycles);
      occ_acc += r.achieved_occupancy * double(r.elapsed_cycles);
      weight_sum += r.elapsed_cycles;
    }
    if (weight_sum > 0) {
      total.issue_slot_utilization = util_acc / double(weight_sum);
      total.meminst_stall_fraction = mem_acc / double(weight_sum);
      total.achieved_occupancy = occ_acc / double(weight_sum);
    }
    return total;
  }

 private:
  const LoweredKernel& lk_;
  LaunchConfig launch_;
  const SMConfig* sm_;
  MemoryImage image_;
  int reg_estimate_ = 0;
  int nthreads_ = 0;
  int warps_per_block_ = 0;

  std::vector<MemArray*> globals_;
  std::vector<Value> scalar_params_;
  std::vector<bool> spilled_;
  std::vector<std::vector<MicroClass>> micro_;
  std::vector<std::array<Value, 32>> stack_;

  std::vector<Block> blocks_;
  std::vector<Warp> warps_;
  int64_t now_ = 0;  // release timestamps during timed commits

  // ---- launch-time binding ------------------------------------------------

  void bind() {
    globals_.reserve(lk_.global_params.size());
    for (const auto& p : lk_.global_params) {
      auto it = image_.arrays.find(p.name);
      if (it == image_.arrays.end())
        fail(ErrCode::InvalidArgument,
             "memory image does not provide array '" + p.name + "'");
      if (it->second.elem_type != param_elem_type(p.kind))
        fail(ErrCode::TypeMismatch, "array '" + p.name + "' element type mismatch");
      globals_.push_back(&it->second);
    }
    scalar_params_.assign(lk_.locals.size(), Value{0});
    for (size_t slot = 0; slot < lk_.locals.size(); ++slot) {
      const LocalInfo& info = lk_.locals[slot];
      if (!info.is_param) continue;
      auto it = image_.scalars.find(info.name);
      if (it == image_.scalars.end())
        fail(ErrCode::InvalidArgument,
             "memory image does not provide scalar '" + info.name + "'");
      if (it->second.type != info.type)
        fail(ErrCode::TypeMismatch, "scalar '" + info.name + "' type mismatch");
      if (info.type == ScalarType::Int32)
        scalar_params_[slot].i = it->second.i;
      else
        scalar_params_[slot].f = it->second.f;
    }
  }

  void compute_spills() {
    spilled_.assign(lk_.locals.size(), false);
    if (!launch_.reg_cap) return;
    // Only the estimate's overflow beyond the cap spills; the last declared
    // locals go first.
    int spill_count = std::max(0, reg_estimate_ - *launch_.reg_cap);
    if (spill_count == 0) return;
    for (size_t i = lk_.locals.size(); i-- > 0 && spill_count > 0;) {
      if (lk_.locals[i].is_param) continue;
      spilled_[i] = true;
      --spill_count;
    }
  }

  void micro_for_prog(const std::vector<SOp>& prog, std::vector<MicroClass>& out) {
    for (const auto& op : prog) {
      switch (op.k) {
        case SOp::K::LoadGlobal: out.push_back(MicroClass::MemLoad); break;
        case SOp::K::LoadShared: out.push_back(MicroClass::Compute); break;
        case SOp::K::LoadLocal:
          if (spilled_[size_t(op.a)]) out.push_back(MicroClass::SpillLoad);
          break;
        case SOp::K::Shuffle: out.push_back(MicroClass::Shuffle); break;
        case SOp::K::Un:
        case SOp::K::Bin:
        case SOp::K::CastIntToFloat:
        case SOp::K::CastFloatToInt:
        case SOp::K::MinOp:
        case SOp::K::MaxOp:
        case SOp::K::FmaxfOp:
          out.push_back(MicroClass::Compute);
          break;
        default:
          break;  // pushes and builtin reads are free
      }
    }
  }

  void build_micro_lists() {
    micro_.clear();
    micro_.reserve(lk_.code.size());
    for (const auto& ins : lk_.code) {
      std::vector<MicroClass> list;
      micro_for_prog(ins.index, list);
      micro_for_prog(ins.value, list);
      switch (ins.op) {
        case Ins::Op::Assign:
          list.push_back(MicroClass::Compute);
          if (ins.tkind == Ins::Target::Global) {
            list.push_back(MicroClass::StoreFire);
          } else if (ins.tkind == Ins::Target::Shared) {
            list.push_back(MicroClass::Compute);
          } else if (spilled_[size_t(ins.tid)]) {
            list.push_back(MicroClass::SpillStore);
          }
          break;
        case Ins::Op::AtomicAdd:
          list.push_back(MicroClass::Atomic);
          break;
        default:
          list.push_back(MicroClass::Compute);  // branch / return / barrier issue
          break;
      }
      micro_.push_back(std::move(list));
    }
  }

  // ---- block / warp setup -------------------------------------------------

  void spawn_block(int block_idx) {
    Block block;
    block.block_idx = block_idx;
    block.nthreads = nthreads_;
    block.locals.assign(size_t(nthreads_) * lk_.locals.size(), Value{0});
    for (int t = 0; t < nthreads_; ++t)
      for (size_t slot = 0; slot < lk_.locals.size(); ++slot)
        if (lk_.locals[slot].is_param)
          block.locals[size_t(t) * lk_.locals.size() + slot] = scalar_params_[slot];
    block.shared.resize(lk_.shared.size());
    for (size_t i = 0; i < lk_.shared.size(); ++i)
      block.shared[i].assign(size_t(lk_.shared[i].length), Value{0});
    block.warp_count = warps_per_block_;
    int slot = int(blocks_.size());
    blocks_.push_back(std::move(block));

    for (int wi = 0; wi < warps_per_block_; ++wi) {
      Warp w;
      w.block_slot = slot;
      w.warp_in_block = wi;
      w.pc.fill(0);
      uint32_t live = 0;
      for (int lane = 0; lane < 32; ++lane)
        if (wi * 32 + lane < nthreads_) live |= (1u << lane);
      w.live = live;
      w.ready = now_;
      if (live == 0) {
        w.exited = true;
        w.done = true;
        blocks_[size_t(slot)].warps_done++;
      }
      warps_.push_back(std::move(w));
    }
  }

  // ---- expression evaluation ---------------------------------------------

  int thread_linear(const Warp& w, int lane) const { return w.warp_in_block * 32 + lane; }

  int32_t builtin_value(BuiltinVar b, const Block& block, int linear) const {
    const Dim3& d = launch_.block_dims;
    switch (b) {
      case BuiltinVar::ThreadIdxX: return linear % d.x;
      case BuiltinVar::ThreadIdxY: return (linear / d.x) % d.y;
      case BuiltinVar::ThreadIdxZ: return linear / (d.x * d.y);
      case BuiltinVar::BlockIdxX: return block.block_idx;
      case BuiltinVar::BlockIdxY: return 0;
      case BuiltinVar::BlockIdxZ: return 0;
      case BuiltinVar::BlockDimX: return d.x;
      case BuiltinVar::BlockDimY: return d.y;
      case BuiltinVar::BlockDimZ: return d.z;
      case BuiltinVar::GridDimX: return launch_.grid_dim;
    }
    return 0;
  }

  Value* locals_of(Block& block, int linear) {
    return &block.locals[size_t(linear) * lk_.locals.size()];
  }

  void check_bounds(int64_t len, int32_t idx, const std::string& name, SourcePos pos) {
    if (idx < 0 || int64_t(idx) >= len)
      fail(ErrCode::OutOfBounds, "array '" + name + "' index " + std::to_string(idx) +
                                     " out of bounds (length " + std::to_string(len) + ")",
           pos);
  }

  /// Evaluates a postfix program over the active lanes; result left in
  /// `out`.
  void eval(const std::vector<SOp>& prog, Warp& w, Block& block, uint32_t active,
            std::array<Value, 32>& out) {
    int sp = 0;  // stack pointer into stack_
    for (const auto& op : prog) {
      switch (op.k) {
        case SOp::K::PushInt:
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l)) stack_[size_t(sp)][size_t(l)].i = op.a;
          ++sp;
          break;
        case SOp::K::PushFloat:
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l)) stack_[size_t(sp)][size_t(l)].f = op.f;
          ++sp;
          break;
        case SOp::K::LoadLocal:
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l))
              stack_[size_t(sp)][size_t(l)] =
                  locals_of(block, thread_linear(w, l))[op.a];
          ++sp;
          break;
        case SOp::K::LoadBuiltin:
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l))
              stack_[size_t(sp)][size_t(l)].i =
                  builtin_value(BuiltinVar(op.a), block, thread_linear(w, l));
          ++sp;
          break;
        case SOp::K::LoadGlobal: {
          MemArray& arr = *globals_[size_t(op.a)];
          auto& top = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            int32_t idx = top[size_t(l)].i;
            check_bounds(arr.length(), idx, lk_.global_params[size_t(op.a)].name, op.pos);
            if (arr.elem_type == ScalarType::Int32)
              top[size_t(l)].i = arr.ints[size_t(idx)];
            else
              top[size_t(l)].f = arr.floats[size_t(idx)];
          }
          break;
        }
        case SOp::K::LoadShared: {
          auto& store = block.shared[size_t(op.a)];
          auto& top = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            int32_t idx = top[size_t(l)].i;
            check_bounds(int64_t(store.size()), idx, lk_.shared[size_t(op.a)].name, op.pos);
            top[size_t(l)] = store[size_t(idx)];
          }
          break;
        }
        case SOp::K::CastIntToFloat: {
          auto& top = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l)) top[size_t(l)].f = float(top[size_t(l)].i);
          break;
        }
        case SOp::K::CastFloatToInt: {
          auto& top = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l)
            if (active & (1u << l)) top[size_t(l)].i = float_to_int(top[size_t(l)].f);
          break;
        }
        case SOp::K::Un: {
          auto& top = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            Value& v = top[size_t(l)];
            if (op.uop == UnaryOp::Neg) {
              if (op.is_float)
                v.f = -v.f;
              else
                v.i = wrap_sub(0, v.i);
            } else {
              v.i = v.i == 0 ? 1 : 0;
            }
          }
          break;
        }
        case SOp::K::Bin: {
          auto& lhs = stack_[size_t(sp) - 2];
          auto& rhs = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            lhs[size_t(l)] = apply_binary(op, lhs[size_t(l)], rhs[size_t(l)]);
          }
          --sp;
          break;
        }
        case SOp::K::MinOp:
        case SOp::K::MaxOp: {
          auto& lhs = stack_[size_t(sp) - 2];
          auto& rhs = stack_[size_t(sp) - 1];
          bool want_min = op.k == SOp::K::MinOp;
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            Value& a = lhs[size_t(l)];
            Value b = rhs[size_t(l)];
            if (op.is_float)
              a.f = want_min ? std::min(a.f, b.f) : std::max(a.f, b.f);
            else
              a.i = want_min ? std::min(a.i, b.i) : std::max(a.i, b.i);
          }
          --sp;
          break;
        }
        case SOp::K::FmaxfOp: {
          auto& lhs = stack_[size_t(sp) - 2];
          auto& rhs = stack_[size_t(sp) - 1];
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            lhs[size_t(l)].f = std::fmax(lhs[size_t(l)].f, rhs[size_t(l)].f);
          }
          --sp;
          break;
        }
        case SOp::K::Shuffle: {
          auto& top = stack_[size_t(sp) - 1];
          std::array<Value, 32> snapshot = top;
          for (int l = 0; l < 32; ++l) {
            if (!(active & (1u << l))) continue;
            int src = l ^ op.a;
            top[size_t(l)] = (active & (1u << src)) ? snapshot[size_t(src)]
                                                    : snapshot[size_t(l)];
          }
          break;
        }
      }
    }
    if (sp > 0) out = stack_[0];
  }

  Value apply_binary(const SOp& op, Value a, Value b) {
    Value r;
    if (op.is_float) {
      switch (op.bop) {
        case BinaryOp::Add: r.f = a.f + b.f; return r;
        case BinaryOp::Sub: r.f = a.f - b.f; return r;
        case BinaryOp::Mul: r.f = a.f * b.f; return r;
        case BinaryOp::Div: r.f = a.f / b.f; return r;
        case BinaryOp::Lt: r.i = a.f < b.f; return r;
        case BinaryOp::Le: r.i = a.f <= b.f; return r;
        case BinaryOp::Gt: r.i = a.f > b.f; return r;
        case BinaryOp::Ge: r.i = a.f >= b.f; return r;
        case BinaryOp::Eq: r.i = a.f == b.f; return r;
        case BinaryOp::Ne: r.i = a.f != b.f; return r;
        default:
          fail(ErrCode::TypeMismatch, "float operands on an int-only operator", op.pos);
      }
    }
    switch (op.bop) {
      case BinaryOp::Add: r.i = wrap_add(a.i, b.i); return r;
      case BinaryOp::Sub: r.i = wrap_sub(a.i, b.i); return r;
      case BinaryOp::Mul: r.i = wrap_mul(a.i, b.i); return r;
      case BinaryOp::Div: r.i = checked_div(a.i, b.i, op.pos); return r;
      case BinaryOp::Mod: r.i = checked_mod(a.i, b.i, op.pos); return r;
      case BinaryOp::Shl: r.i = int32_t(uint32_t(a.i) << (uint32_t(b.i) & 31)); return r;
      case BinaryOp::Shr: r.i = a.i >> (uint32_t(b.i) & 31); return r;
      case BinaryOp::BitAnd: r.i = a.i & b.i; return r;
      case BinaryOp::BitXor: r.i = a.i ^ b.i; return r;
      case BinaryOp::BitOr: r.i = a.i | b.i; return r;
      case BinaryOp::Lt: r.i = a.i < b.i; return r;
      case BinaryOp::Le: r.i = a.i <= b.i; return r;
      case BinaryOp::Gt: r.i = a.i > b.i; return r;
      case BinaryOp::Ge: r.i = a.i >= b.i; return r;
      case BinaryOp::Eq: r.i = a.i == b.i; return r;
      case BinaryOp::Ne: r.i = a.i != b.i; return r;
      case BinaryOp::LogAnd: r.i = (a.i != 0 && b.i != 0); return r;
      case BinaryOp::LogOr: r.i = (a.i != 0 || b.i != 0); return r;
    }
    r.i = 0;
    return r;
  }

  // ---- instruction commit --------------------------------------------------

  uint32_t active_mask(const Warp& w, int exec_pc) const {
    uint32_t mask = 0;
    for (int l = 0; l < 32; ++l)
      if ((w.live & (1u << l)) && w.pc[size_t(l)] == exec_pc) mask |= (1u << l);
    return mask;
  }

  int min_pc(const Warp& w) const {
    int best = kEndPc;
    for (int l = 0; l < 32; ++l)
      if (w.live & (1u << l)) best = std::min(best, w.pc[size_t(l)]);
    return best;
  }

  /// Executes the warp's next instruction (lock-step over the lanes at the
  /// minimum program counter). Returns the executed instruction index.
  int commit(Warp& w) {
    Block& block = blocks_[size_t(w.block_slot)];
    int exec_pc = min_pc(w);
    const Ins& ins = lk_.code[size_t(exec_pc)];
    uint32_t active = active_mask(w, exec_pc);

    switch (ins.op) {
      case Ins::Op::Assign: {
        std::array<Value, 32> idx{};
        if (!ins.index.empty()) eval(ins.index, w, block, active, idx);
        std::array<Value, 32> val{};
        eval(ins.value, w, block, active, val);
        store(ins, w, block, active, idx, val, /*atomic=*/false);
        advance(w, active, exec_pc + 1);
        break;
      }
      case Ins::Op::AtomicAdd: {
        std::array<Value, 32> idx{};
        eval(ins.index, w, block, active, idx);
        std::array<Value, 32> val{};
        eval(ins.value, w, block, active, val);
        store(ins, w, block, active, idx, val, /*atomic=*/true);
        advance(w, active, exec_pc + 1);
        break;
      }
      case Ins::Op::Br:
        advance(w, active, ins.jump);
        break;
      case Ins::Op::CondBrFalse: {
        std::array<Value, 32> cond{};
        eval(ins.value, w, block, active, cond);
        for (int l = 0; l < 32; ++l)
          if (active & (1u << l))
            w.pc[size_t(l)] = cond[size_t(l)].i != 0 ? exec_pc + 1 : ins.jump;
        break;
      }
      case Ins::Op::Return:
        w.live &= ~active;
        if (w.live == 0) {
          w.exited = true;
          blocks_[size_t(w.block_slot)].warps_done++;
        }
        break;
      case Ins::Op::Barrier:
        commit_barrier(w, block, ins, active, exec_pc);
        break;
    }
    return exec_pc;
  }

  void commit_barrier(Warp& w, Block& block, const Ins& ins, uint32_t active, int exec_pc) {
    uint32_t live = w.live;
    if (active != live)
      fail(ErrCode::DivergentBarrier,
           "barrier " + std::to_string(ins.barrier_id) +
               " reached under a divergent active mask",
           ins.pos);
    int count = ins.barrier_count < 0 ? block.nthreads : ins.barrier_count;
    BarrierSpot& spot = block.barriers[size_t(ins.barrier_id)];
    spot.arrived += __builtin_popcount(active);
    advance(w, active, exec_pc + 1);  // resumes here once released
    if (spot.arrived > count)
      fail(ErrCode::BarrierOverflow,
           "barrier " + std::to_string(ins.barrier_id) + " passed by " +
               std::to_string(spot.arrived) + " threads but declares " +
               std::to_string(count),
           ins.pos);
    int self = int(&w - warps_.data());
    spot.waiting.push_back(self);
    w.barrier_wait = true;
    if (spot.arrived == count) {
      for (int wi : spot.waiting) {
        warps_[size_t(wi)].barrier_wait = false;
        warps_[size_t(wi)].ready = now_ + 1;
        warps_[size_t(wi)].reason = Reason::ExecDep;
      }
      spot.waiting.clear();
      spot.arrived = 0;
    }
  }

  void advance(Warp& w, uint32_t active, int target) {
    for (int l = 0; l < 32; ++l)
      if (active & (1u << l)) w.pc[size_t(l)] = target;
  }

  void store(const Ins& ins, Warp& w, Block& block, uint32_t active,
             const std::array<Value, 32>& idx, const std::array<Value, 32>& val,
             bool atomic) {
    switch (ins.tkind) {
      case Ins::Target::Local:
        for (int l = 0; l < 32; ++l)
          if (active & (1u << l))
            locals_of(block, thread_linear(w, l))[ins.tid] = val[size_t(l)];
        break;
      case Ins::Target::Shared: {
        auto& storearr = block.shared[size_t(ins.tid)];
        for (int l = 0; l < 32; ++l) {
          if (!(active & (1u << l))) continue;
          int32_t i = idx[size_t(l)].i;
          check_bounds(int64_t(storearr.size()), i, lk_.shared[size_t(ins.tid)].name, ins.pos);
          if (atomic) {
            if (ins.target_float)
              storearr[size_t(i)].f += val[size_t(l)].f;
            else
              storearr[size_t(i)].i = wrap_add(storearr[size_t(i)].i, val[size_t(l)].i);
          } else {
            storearr[size_t(i)] = val[size_t(l)];
          }
        }
        break;
      }
      case Ins::Target::Global: {
        MemArray& arr = *globals_[size_t(ins.tid)];
        for (int l = 0; l < 32; ++l) {
          if (!(active & (1u << l))) continue;
          int32_t i = idx[size_t(l)].i;
          check_bounds(arr.length(), i, lk_.global_params[size_t(ins.tid)].name, ins.pos);
          if (arr.elem_type == ScalarType::Int32) {
            if (atomic)
              arr.ints[size_t(i)] = wrap_add(arr.ints[size_t(i)], val[size_t(l)].i);
            else
              arr.ints[size_t(i)] = val[size_t(l)].i;
          } else {
            if (atomic)
              arr.floats[size_t(i)] += val[size_t(l)].f;
            else
              arr.floats[size_t(i)] = val[size_t(l)].f;
          }
        }
        break;
      }
    }
  }

  void report_deadlock() {
    for (auto& block : blocks_) {
      for (int id = 0; id < 16; ++id) {
        BarrierSpot& spot = block.barriers[size_t(id)];
        if (spot.waiting.empty()) continue;
        int expected = -1;
        // recover the declared count from the instruction a waiter sits at
        const Warp& w = warps_[size_t(spot.waiting.front())];
        int pc = min_pc(w) - 1;  // barrier pc (arrival advanced it)
        if (pc >= 0 && lk_.code[size_t(pc)].op == Ins::Op::Barrier) {
          int declared = lk_.code[size_t(pc)].barrier_count;
          expected = declared < 0 ? block.nthreads : declared;
        }
        if (capture) {
          capture->deadlocked = true;
          capture->barrier_id = id;
          capture->arrived = spot.arrived;
          capture->expected = expected;
          return;
        }
        fail(ErrCode::BarrierDeadlock,
             "barrier " + std::to_string(id) + " deadlocked: arrived " +
                 std::to_string(spot.arrived) + ", expected " + std::to_string(expected));
      }
    }
    // No barrier involved: every warp is blocked some other way (cannot
    // happen with the current instruction set).
    fail(ErrCode::BarrierDeadlock, "execution stalled with no runnable warp");
  }

  // ---- timed scheduler -----------------------------------------------------

  struct SmMetrics {
    int64_t issues = 0;
    int64_t stall_slots = 0;
    int64_t mem_stall_slots = 0;
    int64_t occ_acc = 0;  // sum over cycles of live resident warps
    int64_t end_time = 0;
    int64_t spills = 0;
  };

  int live_resident_warps() const {
    int n = 0;
    for (const auto& w : warps_)
      if (!w.done) ++n;
    return n;
  }

  bool next_is_mem(const Warp& w) const {
    if (w.micro && w.micro_idx < w.micro->size())
      return uses_mem_slot((*w.micro)[w.micro_idx]);
    int pc = min_pc(w);
    if (pc >= int(micro_.size())) return false;
    const auto& list = micro_[size_t(pc)];
    return !list.empty() && uses_mem_slot(list.front());
  }

  Reason classify_stall(int64_t t, int mem_budget) const {
    bool mem = false, barrier = false, saturated = false, exec = false;
    for (const auto& w : warps_) {
      if (w.done) continue;
      if (w.barrier_wait) {
        barrier = true;
      } else if (w.ready > t) {
        if (w.reason == Reason::Memory)
          mem = true;
        else
          exec = true;
      } else if (mem_budget == 0 && next_is_mem(w)) {
        saturated = true;
      } else {
        exec = true;  // ready but already issued this cycle
      }
    }
    if (mem) return Reason::Memory;
    if (barrier) return Reason::Barrier;
    if (saturated) return Reason::Saturated;
    if (exec) return Reason::ExecDep;
    return Reason::None;
  }

  void account_stall(SmMetrics& m, Reason r, int64_t slots) {
    if (r == Reason::None) return;
    m.stall_slots += slots;
    if (r == Reason::Memory) m.mem_stall_slots += slots;
  }

  ProfileResult run_one_sm(const std::vector<int>& block_list, int blocks_per_sm) {
    const SMConfig& sm = *sm_;
    blocks_.clear();
    warps_.clear();
    now_ = 0;
    size_t next_block = 0;
    while (next_block < block_list.size() && int(blocks_.size()) < blocks_per_sm)
      spawn_block(block_list[next_block++]);

    SmMetrics m;
    int64_t t = 0;
    while (true) {
      // retire finished blocks, bring in waiting ones
      for (size_t bs = 0; bs < blocks_.size(); ++bs) {
        if (blocks_[bs].warp_count > 0 && blocks_[bs].warps_done == blocks_[bs].warp_count &&
            next_block < block_list.size()) {
          blocks_[bs].warps_done = -1;  // retired marker
          now_ = t;
          spawn_block_replacing(block_list[next_block++], t);
        }
      }

      bool any_left = false;
      for (const auto& w : warps_)
        if (!w.done) {
          any_left = true;
          break;
        }
      if (!any_left) break;

      now_ = t;
      int mem_budget = sm.mem_slots_per_cycle;
      int issued_now = 0;
      std::vector<char> issued_flag(warps_.size(), 0);
      for (int slot = 0; slot < sm.issue_slots; ++slot) {
        int pick = -1;
        for (size_t wi = 0; wi < warps_.size(); ++wi) {
          const Warp& w = warps_[wi];
          if (w.done || w.barrier_wait || issued_flag[wi] || w.ready > t) continue;
          if (next_is_mem(w) && mem_budget == 0) continue;
          pick = int(wi);
          break;
        }
        if (pick < 0) {
          account_stall(m, classify_stall(t, mem_budget), 1);
          continue;
        }
        issued_flag[size_t(pick)] = 1;
        issue(warps_[size_t(pick)], t, mem_budget, m);
        ++issued_now;
      }
      m.occ_acc += live_resident_warps();

      if (issued_now > 0) {
        ++t;
        continue;
      }
      // nothing issued: jump to the next ready time
      int64_t t_next = kNever;
      bool any_waiting = false;
      for (const auto& w : warps_) {
        if (w.done) continue;
        if (w.barrier_wait) {
          any_waiting = true;
          continue;
        }
        t_next = std::min(t_next, w.ready);
      }
      if (t_next == kNever) {
        if (any_waiting) {
          report_deadlock();
          return ProfileResult{};  // only reached with capture set
        }
        break;
      }
      int64_t span = std::max<int64_t>(1, t_next - t) - 1;  // current cycle already counted
      if (span > 0) {
        Reason r = classify_stall(t + 1, sm.mem_slots_per_cycle);
        account_stall(m, r, span * sm.issue_slots);
        m.occ_acc += span * live_resident_warps();
      }
      t = std::max(t + 1, t_next);
    }

    ProfileResult result;
    result.elapsed_cycles = m.end_time;
    result.spill_loads_stores = m.spills;
    if (m.end_time > 0) {
      result.issue_slot_utilization =
          double(m.issues) / (double(m.end_time) * sm.issue_slots);
      result.achieved_occupancy =
          double(m.occ_acc) / (double(m.end_time) * sm.max_warps_per_sm());
    }
    if (m.stall_slots > 0)
      result.meminst_stall_fraction = double(m.mem_stall_slots) / double(m.stall_slots);
    return result;
  }

  void spawn_block_replacing(int block_idx, int64_t t) {
    now_ = t;
    size_t first_new_warp = warps_.size();
    spawn_block(block_idx);
    for (size_t wi = first_new_warp; wi < warps_.size(); ++wi) warps_[wi].ready = t + 1;
  }

  void issue(Warp& w, int64_t t, int& mem_budget, SmMetrics& m) {
    const Latencies& lat = sm_->latencies;
    if (!w.micro || w.micro_idx >= w.micro->size()) {
      int ins_idx = commit(w);
      w.micro = &micro_[size_t(ins_idx)];
      w.micro_idx = 0;
    }
    MicroClass mc = (*w.micro)[w.micro_idx++];
    ++m.issues;
    int64_t done_at = t + 1;
    switch (mc) {
      case MicroClass::Compute:
        done_at = t + lat.compute_cycles;
        w.reason = Reason::ExecDep;
        break;
      case MicroClass::Shuffle:
        done_at = t + lat.shuffle_cycles;
        w.reason = Reason::ExecDep;
        break;
      case MicroClass::MemLoad:
        --mem_budget;
        done_at = t + lat.memory_cycles;
        w.reason = Reason::Memory;
        break;
      case MicroClass::SpillLoad:
        --mem_budget;
        ++m.spills;
        done_at = t + lat.memory_cycles;
        w.reason = Reason::Memory;
        break;
      case MicroClass::Atomic:
        --mem_budget;
        done_at = t + lat.atomic_cycles;
        w.reason = Reason::Memory;
        break;
      case MicroClass::StoreFire:
        --mem_budget;
        done_at = t + 1;
        w.reason = Reason::ExecDep;
        break;
      case MicroClass::SpillStore:
        --mem_budget;
        ++m.spills;
        done_at = t + 1;
        w.reason = Reason::ExecDep;
        break;
    }
    w.ready = done_at;
    m.end_time = std::max(m.end_time, done_at);
    if (w.micro_idx >= w.micro->size() && w.exited) w.done = true;
  }
};

LaunchConfig validated_launch(const Kernel& kernel, const LaunchConfig& launch,
                              int max_threads_per_block) {
  LaunchConfig l = launch;
  if (l.block_dims.count() == 0) l.block_dims = kernel.block_dims;
  if (l.grid_dim <= 0) fail(ErrCode::InvalidArgument, "grid dimension must be positive");
  if (l.block_dims.x <= 0 || l.block_dims.y <= 0 || l.block_dims.z <= 0)
    fail(ErrCode::InvalidArgument, "block dimensions must be positive");
  if (!kernel.tunable && !(l.block_dims == kernel.block_dims))
    fail(ErrCode::InvalidArgument,
         "kernel '" + kernel.name + "' declares fixed block dimensions");
  if (l.block_dims.count() > max_threads_per_block)
    fail(ErrCode::ThreadBudgetExceeded,
         "launch uses " + std::to_string(l.block_dims.count()) + " threads per block (max " +
             std::to_string(max_threads_per_block) + ")");
  return l;
}

}  // namespace

LaunchConfig launch_for(const Kernel& kernel) {
  LaunchConfig l;
  l.grid_dim = kernel.meta.grid_dim;
  l.block_dims = kernel.block_dims;
  if (kernel.meta.regcap) l.reg_cap = kernel.meta.regcap;
  return l;
}

MemoryImage run_functional(const Kernel& kernel, const LaunchConfig& launch,
                           const MemoryImage& mem) {
  LaunchConfig l = validated_launch(kernel, launch, 1024);
  LoweredKernel lk = lower_kernel(kernel);
  Exec exec(lk, l, nullptr, mem);
  exec.run_functional();
  return exec.take_image();
}

std::pair<MemoryImage, ProfileResult> run_timed(const Kernel& kernel,
                                                const LaunchConfig& launch,
                                                const SMConfig& sm, const MemoryImage& mem) {
  sm.validate();
  LaunchConfig l = validated_launch(kernel, launch, sm.max_threads_per_block);
  LoweredKernel lk = lower_kernel(kernel);

  KernelResources res = kernel_resources(kernel, int(l.block_dims.count()));
  int reg_estimate = res.regs_per_thread;
  if (l.reg_cap) res.regs_per_thread = std::min(res.regs_per_thread, *l.reg_cap);
  int blocks_per_sm = occupancy(res, sm).blocks_per_sm;

  Exec exec(lk, l, &sm, mem, reg_estimate);
  ProfileResult profile = exec.run_timed(blocks_per_sm);
  return {exec.take_image(), profile};
}

DeadlockReport detect_deadlock(const Kernel& kernel, const LaunchConfig& launch,
                               const MemoryImage& mem) {
  LaunchConfig l = validated_launch(kernel, launch, 1024);
  LoweredKernel lk = lower_kernel(kernel);
  Exec exec(lk, l, nullptr, mem);
  DeadlockReport report;
  exec.capture = &report;
  exec.run_functional();
  return report;
}

std::string profile_report(const ProfileResult& p) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "elapsed_cycles = %lld\n"
                "issue_slot_utilization = %.6f\n"
                "meminst_stall_fraction = %.6f\n"
                "achieved_occupancy = %.6f\n"
                "spill_loads_stores = %lld\n",
                static_cast<long long>(p.elapsed_cycles), p.issue_slot_utilization,
                p.meminst_stall_fraction, p.achieved_occupancy,
                static_cast<long long>(p.spill_loads_stores));
  return buf;
}

}  // namespace mkfuse
