#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mkfuse/fuser.hpp"

namespace mkfuse {

struct EvalOutcome {
  int64_t cycles = 0;
  double occupancy = 0.0;    // modeled occupancy fraction
  double utilization = 0.0;  // issue-slot utilization
};

/// Evaluation interface of the configuration search. Implementations must
/// be side-effect-free with respect to the search state.
class ProfilerBackend {
 public:
  virtual ~ProfilerBackend() = default;
  virtual EvalOutcome evaluate(const FusedKernel& fused, const FusionConfig& config) = 0;
};

/// Default backend: cycle count from the timed simulator.
class SimulatorBackend : public ProfilerBackend {
 public:
  SimulatorBackend(SMConfig sm, MemoryImage mem);
  EvalOutcome evaluate(const FusedKernel& fused, const FusionConfig& config) override;

 private:
  SMConfig sm_;
  MemoryImage mem_;
};

/// Spawns `command <source-file>` and reads a cycle count (first integer)
/// from its stdout. Preserves an external profiling workflow.
class ExternalCommandBackend : public ProfilerBackend {
 public:
  explicit ExternalCommandBackend(std::string command, EmitStyle style = EmitStyle::Goto);
  EvalOutcome evaluate(const FusedKernel& fused, const FusionConfig& config) override;

 private:
  std::string command_;
  EmitStyle style_;
  int counter_ = 0;
};

struct EvalPoint {
  FusionConfig config;
  int64_t cycles = 0;
  double occupancy = 0.0;
  double utilization = 0.0;
};

struct SearchResult {
  FusedKernel best_kernel;
  FusionConfig best_config;
  int64_t best_time = 0;
  std::vector<EvalPoint> trace;
};

/// Sweeps d1 = 128, 256, ..., d0-128 over two tunable kernels, evaluating
/// each partition without a register cap and with the computed bound; the
/// winner is the cycle minimum (ties: smaller d1, then no cap).
SearchResult search_config(const Kernel& k1, const Kernel& k2, int d0,
                           ProfilerBackend& backend, const SMConfig& sm);

/// Single-partition path for kernels with fixed block dims: both fixed use
/// their declared sizes, a fixed+tunable pair assigns d0 minus the fixed
/// size to the tunable side. Still evaluates cap and no-cap variants.
SearchResult fixed_partition_fuse(const Kernel& k1, const Kernel& k2,
                                  ProfilerBackend& backend, const SMConfig& sm,
                                  int d0 = 1024);

/// d1,d2,reg_cap,cycles,occupancy,utilization rows.
std::string trace_csv(const SearchResult& result);

}  // namespace mkfuse
