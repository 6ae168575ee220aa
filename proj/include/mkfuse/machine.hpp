#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mkfuse/ast.hpp"

namespace mkfuse {

struct Latencies {
  int compute_cycles = 4;
  int memory_cycles = 400;
  int shuffle_cycles = 8;
  int atomic_cycles = 48;
};

/// Streaming-multiprocessor constants. Presets share everything but the
/// latency table.
struct SMConfig {
  int64_t regs_per_sm = 65536;
  int64_t shmem_per_sm = 98304;
  int max_threads_per_sm = 2048;
  int max_threads_per_block = 1024;
  int warp_size = 32;
  int max_blocks_per_sm = 32;
  int num_sms = 1;
  int issue_slots = 4;
  int mem_slots_per_cycle = 2;
  Latencies latencies;

  int max_warps_per_sm() const { return max_threads_per_sm / warp_size; }

  static SMConfig pascal_like();
  static SMConfig volta_like();
  /// "pascal-like", "volta-like", or a path to a key=value config file.
  static SMConfig preset_or_file(const std::string& spec);
  static SMConfig from_file(const std::string& path);

  void validate() const;
};

struct KernelResources {
  int regs_per_thread = 1;
  int64_t shmem_per_block = 0;
  int threads_per_block = 1;
};

enum class LimitingResource { Registers, SharedMemory, Threads, BlockSlots };

const char* to_string(LimitingResource r);

struct OccupancyReport {
  int blocks_per_sm = 0;
  LimitingResource limiting = LimitingResource::Registers;
  int achieved_warps = 0;
  double occupancy_fraction = 0.0;
};

/// Max simultaneously-live declared scalar locals plus a fixed overhead of
/// 8; a `regs=N` kernel annotation overrides the estimate.
int estimate_registers(const Kernel& kernel);

/// Resources of one kernel launch; threads defaults to the declared block
/// dimensions.
KernelResources kernel_resources(const Kernel& kernel,
                                 std::optional<int> threads_override = std::nullopt);

/// Blocks per SM as the floor-min over registers, shared memory, threads
/// and block slots; ties on the limiter break in that order.
OccupancyReport occupancy(const KernelResources& r, const SMConfig& sm);

/// Per-thread register bound that lets the fused kernel keep the block
/// residency of its constituents: b1/b2 from the constituent launches, b0
/// capped by fused shared memory and the thread budget, r0 = regs/(b0*d0).
int register_bound(const KernelResources& r1, const KernelResources& r2,
                   int64_t fused_shmem, int d0, const SMConfig& sm);

/// Cycle-weighted mean of two issue-slot utilizations.
double combined_utilization(double util1, int64_t cycles1, double util2, int64_t cycles2);

}  // namespace mkfuse
