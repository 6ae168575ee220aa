#include "mkfuse/search.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace mkfuse {

SimulatorBackend::SimulatorBackend(SMConfig sm, MemoryImage mem)
    : sm_(std::move(sm)), mem_(std::move(mem)) {}

EvalOutcome SimulatorBackend::evaluate(const FusedKernel& fused, const FusionConfig& config) {
  Kernel kernel = fused.to_kernel();
  LaunchConfig launch;
  launch.grid_dim = fused.grid_dim;
  launch.block_dims = Dim3{config.d0, 1, 1};
  launch.reg_cap = config.reg_cap;

  KernelResources res = kernel_resources(kernel, config.d0);
  if (config.reg_cap) res.regs_per_thread = std::min(res.regs_per_thread, *config.reg_cap);
  OccupancyReport occ = occupancy(res, sm_);

  auto [mem_out, profile] = run_timed(kernel, launch, sm_, mem_);
  (void)mem_out;
  return EvalOutcome{profile.elapsed_cycles, occ.occupancy_fraction,
                     profile.issue_slot_utilization};
}

ExternalCommandBackend::ExternalCommandBackend(std::string command, EmitStyle style)
    : command_(std::move(command)), style_(style) {}

EvalOutcome ExternalCommandBackend::evaluate(const FusedKernel& fused,
                                             const FusionConfig& config) {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() /
                  (fused.name + "_" + std::to_string(config.d1) + "_" +
                   std::to_string(config.reg_cap ? *config.reg_cap : 0) + "_" +
                   std::to_string(counter_++) +
                   (style_ == EmitStyle::Goto ? ".cu" : ".mk"));
  {
    std::ofstream out(path);
    if (!out) fail(ErrCode::Io, "cannot write candidate source to " + path.string());
    out << emit_source(fused, style_);
  }
  std::string cmd = command_ + " " + path.string();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) fail(ErrCode::Io, "cannot spawn profiler command: " + command_);
  std::string output;
  char buf[256];
  while (fgets(buf, sizeof(buf), pipe)) output += buf;
  int status = pclose(pipe);
  std::error_code ec;
  fs::remove(path, ec);
  if (status != 0)
    fail(ErrCode::Io, "profiler command failed (exit " + std::to_string(status) + ")");
  // first integer in the output is the cycle count
  size_t i = 0;
  while (i < output.size() && !isdigit(static_cast<unsigned char>(output[i]))) ++i;
  if (i == output.size())
    fail(ErrCode::Io, "profiler command printed no cycle count: " + output);
  return EvalOutcome{std::strtoll(output.c_str() + i, nullptr, 10), 0.0, 0.0};
}

namespace {

int64_t fused_shared_bytes(const FusedKernel& fused) {
  int64_t bytes = 0;
  for (const auto& sh : fused.shared_decls) bytes += sh.length * 4;
  return bytes;
}

struct Fold {
  SearchResult result;
  bool have_best = false;

  void consider(const FusedKernel& fused, const FusionConfig& config,
                const EvalOutcome& out) {
    result.trace.push_back(EvalPoint{config, out.cycles, out.occupancy, out.utilization});
    // strict < with in-order evaluation keeps the smaller d1 and the
    // no-cap variant on ties
    if (!have_best || out.cycles < result.best_time) {
      have_best = true;
      result.best_time = out.cycles;
      result.best_kernel = fused;
      result.best_kernel.config = config;
      result.best_config = config;
    }
  }
};

/// Evaluates one partition, uncapped then capped with the register bound.
void evaluate_partition(const Kernel& k1, const Kernel& k2, int d1, int d2,
                        ProfilerBackend& backend, const SMConfig& sm, Fold& fold) {
  FusedKernel fused;
  try {
    fused = generate_fused(k1, k2, d1, d2, sm);
  } catch (const Error&) {
    return;  // infeasible partition
  }
  FusionConfig config = fused.config;

  try {
    fold.consider(fused, config, backend.evaluate(fused, config));
  } catch (const Error&) {
    // candidate does not fit uncapped; the capped variant may still work
  }

  try {
    KernelResources r1 = kernel_resources(k1, d1);
    KernelResources r2 = kernel_resources(k2, d2);
    int r0 = register_bound(r1, r2, fused_shared_bytes(fused), config.d0, sm);
    FusionConfig capped = config;
    capped.reg_cap = r0;
    FusedKernel fused_capped = fused;
    fused_capped.config = capped;
    fold.consider(fused_capped, capped, backend.evaluate(fused_capped, capped));
  } catch (const Error&) {
    // no feasible register bound for this partition
  }
}

}  // namespace

SearchResult search_config(const Kernel& k1, const Kernel& k2, int d0,
                           ProfilerBackend& backend, const SMConfig& sm) {
  if (d0 <= 128 || d0 % 128 != 0)
    fail(ErrCode::InvalidArgument,
         "d0 must be a positive multiple of 128 with room for both kernels");
  if (d0 > sm.max_threads_per_block)
    fail(ErrCode::ThreadBudgetExceeded,
         "d0 = " + std::to_string(d0) + " exceeds max threads per block");
  if (!k1.tunable || !k2.tunable)
    fail(ErrCode::InvalidArgument,
         "both kernels must be tunable; use the fixed-partition path otherwise");

  Fold fold;
  for (int d1 = 128; d1 < d0; d1 += 128)
    evaluate_partition(k1, k2, d1, d0 - d1, backend, sm, fold);

  if (fold.result.trace.empty())
    fail(ErrCode::NothingFeasible, "no thread-space partition could be generated");
  return std::move(fold.result);
}

SearchResult fixed_partition_fuse(const Kernel& k1, const Kernel& k2,
                                  ProfilerBackend& backend, const SMConfig& sm, int d0) {
  if (k1.tunable && k2.tunable)
    fail(ErrCode::InvalidArgument,
         "both kernels are tunable; use the partition search instead");
  int d1, d2;
  if (!k1.tunable && !k2.tunable) {
    d1 = int(k1.block_dims.count());
    d2 = int(k2.block_dims.count());
    if (d1 + d2 > sm.max_threads_per_block)
      fail(ErrCode::IncompatibleFixedDims,
           "fixed dims " + std::to_string(d1) + " + " + std::to_string(d2) +
               " exceed max threads per block (" + std::to_string(sm.max_threads_per_block) +
               ")");
  } else if (!k1.tunable) {
    d1 = int(k1.block_dims.count());
    d2 = d0 - d1;
  } else {
    d2 = int(k2.block_dims.count());
    d1 = d0 - d2;
  }
  if (d1 <= 0 || d2 <= 0)
    fail(ErrCode::IncompatibleFixedDims,
         "fixed dims leave no room for the other kernel at d0 = " + std::to_string(d0));

  Fold fold;
  evaluate_partition(k1, k2, d1, d2, backend, sm, fold);
  if (fold.result.trace.empty())
    fail(ErrCode::NothingFeasible, "the fixed partition could not be generated");
  return std::move(fold.result);
}

std::string trace_csv(const SearchResult& result) {
  std::string out = "d1,d2,reg_cap,cycles,occupancy,utilization\n";
  char buf[160];
  for (const auto& point : result.trace) {
    std::string cap = point.config.reg_cap ? std::to_string(*point.config.reg_cap) : "none";
    std::snprintf(buf, sizeof(buf), "%d,%d,%s,%lld,%.6f,%.6f\n", point.config.d1,
                  point.config.d2, cap.c_str(), static_cast<long long>(point.cycles),
                  point.occupancy, point.utilization);
    out += buf;
  }
  return out;
}

}  // namespace mkfuse
