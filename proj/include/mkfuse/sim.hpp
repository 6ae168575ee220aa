#pragma once

#include <optional>
#include <string>
#include <utility>

#include "mkfuse/ast.hpp"
#include "mkfuse/machine.hpp"
#include "mkfuse/memimage.hpp"

namespace mkfuse {

struct LaunchConfig {
  int grid_dim = 1;
  Dim3 block_dims;
  std::optional<int> reg_cap;
};

/// Launch the kernel exactly as declared.
LaunchConfig launch_for(const Kernel& kernel);

struct ProfileResult {
  int64_t elapsed_cycles = 0;
  double issue_slot_utilization = 0.0;
  double meminst_stall_fraction = 0.0;
  double achieved_occupancy = 0.0;
  int64_t spill_loads_stores = 0;
};

/// key = value text, stable across runs and platforms.
std::string profile_report(const ProfileResult& p);

struct DeadlockReport {
  bool deadlocked = false;
  int barrier_id = -1;
  int arrived = 0;
  int expected = 0;
};

/// Deterministic lock-step execution: blocks in ascending order, warps in a
/// fixed round-robin, 32-lane execution with an active-mask over per-lane
/// program counters. Returns the final memory state.
MemoryImage run_functional(const Kernel& kernel, const LaunchConfig& launch,
                           const MemoryImage& mem);

/// Cycle-level run under the SM model: per cycle each issue slot picks the
/// oldest eligible warp; warps stall on memory latency, partial barriers
/// and saturated memory slots; block residency follows the occupancy
/// model; reg_cap spills surplus locals to memory-latency accesses.
std::pair<MemoryImage, ProfileResult> run_timed(const Kernel& kernel,
                                                const LaunchConfig& launch,
                                                const SMConfig& sm, const MemoryImage& mem);

/// Runs the kernel functionally and reports a barrier deadlock as data
/// instead of throwing.
DeadlockReport detect_deadlock(const Kernel& kernel, const LaunchConfig& launch,
                               const MemoryImage& mem);

inline double combined_utilization(const ProfileResult& a, const ProfileResult& b) {
  return combined_utilization(a.issue_slot_utilization, a.elapsed_cycles,
                              b.issue_slot_utilization, b.elapsed_cycles);
}

}  // namespace mkfuse
