#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mkfuse/ast.hpp"
#include "mkfuse/machine.hpp"
#include "mkfuse/sim.hpp"

namespace mkfuse {

/// One point of the thread-space partition search.
struct FusionConfig {
  int d1 = 0;
  int d2 = 0;
  int d0 = 0;  // d1 + d2
  std::optional<int> reg_cap;

  /// Warp alignment (>= 32, multiples of 32) and the SM thread budget.
  void validate(const SMConfig& sm) const;
};

struct BarrierEntry {
  int barrier_id = 0;
  int participant_count = 0;
  int owner = 0;  // constituent index, 1 or 2
};

struct BarrierTable {
  std::vector<BarrierEntry> entries;
};

/// Product of horizontally fusing two normalized kernels.
struct FusedKernel {
  std::string name;
  std::string k1_name;
  std::string k2_name;
  std::vector<Param> params;             // merged, deduplicated
  std::vector<SharedDecl> shared_decls;  // k1's then k2's
  StmtBlock prologue_decls;              // prologue variables
  StmtBlock decls;                       // merged lifted constituent declarations
  StmtBlock prologue;                    // thread-id remap statements
  Expr guard1;                           // global_tid < d1
  Expr guard2;                           // global_tid >= d1
  StmtBlock body1;                       // rewritten constituent statements
  StmtBlock body2;
  BarrierTable barriers;
  FusionConfig config;
  int grid_dim = 1;
  Dim3 dims1;
  Dim3 dims2;

  /// Canonical structured form (valid Mini-Kernel).
  Kernel to_kernel() const;
};

/// Thread-id remap block: declarations first, then global_tid / tid_N /
/// size_N assignments and the per-range row-major index reconstruction.
StmtBlock build_prologue(Dim3 dims1, Dim3 dims2, int d1);

/// threadIdx.{x,y,z} -> threadIdx_{x,y,z}, blockDim.{x,y,z} ->
/// blockDim_{x,y,z}; blockIdx.* and gridDim.* stay (same grid).
StmtBlock rewrite_builtins(const StmtBlock& body, int constituent);

/// Every block-wide barrier becomes a partial barrier (id, count).
StmtBlock replace_barriers(const StmtBlock& body, int id, int count);

/// Fuses two normalized kernels at the (d1, d2) thread partition.
FusedKernel generate_fused(const Kernel& k1, const Kernel& k2, int d1, int d2,
                           const SMConfig& sm);

enum class EmitStyle { Structured, Goto };

/// `Structured` re-parses under the Mini-Kernel grammar; `Goto` reproduces
/// the CUDA-flavored guard-goto layout with inline bar.sync asm.
std::string emit_source(const FusedKernel& fused, EmitStyle style);

// Simulation entry points for fused kernels.
LaunchConfig launch_for(const FusedKernel& fused);

inline MemoryImage run_functional(const FusedKernel& fused, const LaunchConfig& launch,
                                  const MemoryImage& mem) {
  return run_functional(fused.to_kernel(), launch, mem);
}

inline std::pair<MemoryImage, ProfileResult> run_timed(const FusedKernel& fused,
                                                       const LaunchConfig& launch,
                                                       const SMConfig& sm,
                                                       const MemoryImage& mem) {
  return run_timed(fused.to_kernel(), launch, sm, mem);
}

inline DeadlockReport detect_deadlock(const FusedKernel& fused, const LaunchConfig& launch,
                                      const MemoryImage& mem) {
  return detect_deadlock(fused.to_kernel(), launch, mem);
}

}  // namespace mkfuse
