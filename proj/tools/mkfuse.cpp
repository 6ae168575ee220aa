// mkfuse - horizontal kernel fusion toolchain for the Mini-Kernel language.
//
// Subcommands: fuse, simulate, search, occupancy, check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mkfuse/frontend.hpp"
#include "mkfuse/fuser.hpp"
#include "mkfuse/search.hpp"

namespace fs = std::filesystem;
using namespace mkfuse;

namespace {

/// Parsed command-line state: one command, its inputs and outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> inputs;
  std::string sm_spec = "pascal-like";
  std::vector<std::string> mem_paths;
  std::optional<uint64_t> seed;
  std::string regcap = "auto";
  std::string style = "goto";
  int d0 = 1024;
  int d1 = 0;
  int d2 = 0;
  std::string out_path;
  std::string trace_path;
  std::string kernel_name;
  std::string profiler_cmd;
  std::string dump_mem;
  bool sequential = false;
  // occupancy flags
  int regs = 0;
  int64_t shmem = 0;
  int threads = 0;

  void check_inputs_exist() const {
    for (const auto& p : inputs)
      if (!fs::exists(p)) fail(ErrCode::Io, "input file '" + p + "' does not exist");
    for (const auto& p : mem_paths)
      if (!fs::exists(p)) fail(ErrCode::Io, "memory image '" + p + "' does not exist");
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::Io, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrCode::Io, "cannot write '" + path + "'");
  out << text;
}

struct LoadedKernel {
  Program program;
  Kernel kernel;  // selected kernel
};

LoadedKernel load_kernel(const std::string& path, const std::string& name) {
  LoadedKernel lk;
  lk.program = parse_program(read_file(path));
  if (lk.program.kernels.empty())
    fail(ErrCode::InvalidArgument, "'" + path + "' defines no kernel");
  if (!name.empty()) {
    const Kernel* k = lk.program.find_kernel(name);
    if (!k) fail(ErrCode::InvalidArgument, "'" + path + "' has no kernel '" + name + "'");
    lk.kernel = *k;
  } else {
    lk.kernel = lk.program.kernels.front();
  }
  return lk;
}

MemoryImage load_images(const RunManifest& m) {
  MemoryImage image;
  for (const auto& path : m.mem_paths) image.merge(MemoryImage::load(path, m.seed));
  return image;
}

std::optional<int> resolve_regcap(const std::string& spec, const Kernel& kernel) {
  if (spec == "off") return std::nullopt;
  if (spec == "auto") return kernel.meta.regcap;  // recorded annotation, if any
  int v = std::stoi(spec);
  if (v <= 0) fail(ErrCode::InvalidArgument, "register cap must be positive");
  return v;
}

void print_occupancy(const KernelResources& res, const SMConfig& sm) {
  OccupancyReport rep = occupancy(res, sm);
  std::printf("blocks_per_sm = %d\n", rep.blocks_per_sm);
  std::printf("limiting_resource = %s\n", to_string(rep.limiting));
  std::printf("achieved_warps = %d\n", rep.achieved_warps);
  std::printf("occupancy_fraction = %.6f\n", rep.occupancy_fraction);
}

int cmd_fuse(const RunManifest& m) {
  SMConfig sm = SMConfig::preset_or_file(m.sm_spec);
  LoadedKernel k1 = load_kernel(m.inputs[0], "");
  LoadedKernel k2 = load_kernel(m.inputs[1], "");
  Kernel n1 = normalize_kernel(k1.kernel, k1.program.functions, "k1_");
  Kernel n2 = normalize_kernel(k2.kernel, k2.program.functions, "k2_");

  FusedKernel fused = generate_fused(n1, n2, m.d1, m.d2, sm);

  KernelResources r1 = kernel_resources(n1, m.d1);
  KernelResources r2 = kernel_resources(n2, m.d2);
  Kernel fused_kernel = fused.to_kernel();
  KernelResources rf = kernel_resources(fused_kernel, fused.config.d0);
  int64_t shbytes = rf.shmem_per_block;
  int r0 = -1;
  try {
    r0 = register_bound(r1, r2, shbytes, fused.config.d0, sm);
  } catch (const Error&) {
  }
  if (m.regcap == "auto") {
    // record the suggested bound so the emitted kernel carries it
    if (r0 > 0) fused.config.reg_cap = r0;
  } else if (m.regcap != "off") {
    fused.config.reg_cap = std::stoi(m.regcap);
  }

  EmitStyle style = m.style == "structured" ? EmitStyle::Structured : EmitStyle::Goto;
  std::string out_path =
      m.out_path.empty() ? (style == EmitStyle::Goto ? "fused.cu" : "fused.mk") : m.out_path;
  write_file(out_path, emit_source(fused, style));

  std::printf("fused_kernel = %s\n", fused.name.c_str());
  std::printf("partition = d1 %d (%s), d2 %d (%s), d0 %d\n", fused.config.d1,
              fused.k1_name.c_str(), fused.config.d2, fused.k2_name.c_str(),
              fused.config.d0);
  for (const auto& entry : fused.barriers.entries) {
    int uses = 0;
    const StmtBlock& body = entry.owner == 1 ? fused.body1 : fused.body2;
    for_each_stmt(body, [&](const Stmt& s) {
      if (const auto* pb = std::get_if<PartialBarrierStmt>(&s.node))
        if (pb->id == entry.barrier_id) ++uses;
    });
    std::printf("barrier id %d: count %d, constituent %d, uses %d\n", entry.barrier_id,
                entry.participant_count, entry.owner, uses);
  }
  std::printf("registers = k1 %d, k2 %d, fused %d\n", r1.regs_per_thread, r2.regs_per_thread,
              rf.regs_per_thread);
  std::printf("shared_bytes = %lld\n", static_cast<long long>(shbytes));
  if (fused.config.reg_cap)
    std::printf("reg_cap = %d\n", *fused.config.reg_cap);
  else if (r0 > 0)
    std::printf("suggested_reg_cap = %d\n", r0);
  KernelResources capped = rf;
  if (fused.config.reg_cap)
    capped.regs_per_thread = std::min(capped.regs_per_thread, *fused.config.reg_cap);
  print_occupancy(capped, sm);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_simulate(const RunManifest& m) {
  SMConfig sm = SMConfig::preset_or_file(m.sm_spec);
  MemoryImage image = load_images(m);

  if (m.sequential) {
    LoadedKernel k1 = load_kernel(m.inputs[0], "");
    LoadedKernel k2 = load_kernel(m.inputs[1], "");
    Kernel i1 = inline_calls(k1.kernel, k1.program.functions);
    Kernel i2 = inline_calls(k2.kernel, k2.program.functions);
    auto [mem1, p1] = run_timed(i1, launch_for(i1), sm, image);
    auto [mem2, p2] = run_timed(i2, launch_for(i2), sm, mem1);
    ProfileResult combined;
    combined.elapsed_cycles = p1.elapsed_cycles + p2.elapsed_cycles;
    combined.issue_slot_utilization = combined_utilization(p1, p2);
    combined.meminst_stall_fraction =
        combined_utilization(p1.meminst_stall_fraction, p1.elapsed_cycles,
                             p2.meminst_stall_fraction, p2.elapsed_cycles);
    combined.achieved_occupancy =
        combined_utilization(p1.achieved_occupancy, p1.elapsed_cycles,
                             p2.achieved_occupancy, p2.elapsed_cycles);
    combined.spill_loads_stores = p1.spill_loads_stores + p2.spill_loads_stores;
    std::printf("k1_cycles = %lld\n", static_cast<long long>(p1.elapsed_cycles));
    std::printf("k2_cycles = %lld\n", static_cast<long long>(p2.elapsed_cycles));
    std::fputs(profile_report(combined).c_str(), stdout);
    std::printf("digest = %s\n", mem2.digest_hex().c_str());
    if (!m.dump_mem.empty()) write_file(m.dump_mem, mem2.serialize());
    return 0;
  }

  LoadedKernel lk = load_kernel(m.inputs[0], m.kernel_name);
  Kernel kernel = inline_calls(lk.kernel, lk.program.functions);
  LaunchConfig launch = launch_for(kernel);
  launch.reg_cap = resolve_regcap(m.regcap, kernel);
  auto [mem_out, profile] = run_timed(kernel, launch, sm, image);
  std::fputs(profile_report(profile).c_str(), stdout);
  std::printf("digest = %s\n", mem_out.digest_hex().c_str());
  if (!m.dump_mem.empty()) write_file(m.dump_mem, mem_out.serialize());
  return 0;
}

int cmd_search(const RunManifest& m) {
  SMConfig sm = SMConfig::preset_or_file(m.sm_spec);
  LoadedKernel k1 = load_kernel(m.inputs[0], "");
  LoadedKernel k2 = load_kernel(m.inputs[1], "");
  Kernel n1 = normalize_kernel(k1.kernel, k1.program.functions, "k1_");
  Kernel n2 = normalize_kernel(k2.kernel, k2.program.functions, "k2_");

  std::unique_ptr<ProfilerBackend> backend;
  if (!m.profiler_cmd.empty())
    backend = std::make_unique<ExternalCommandBackend>(m.profiler_cmd);
  else
    backend = std::make_unique<SimulatorBackend>(sm, load_images(m));

  SearchResult result = (n1.tunable && n2.tunable)
                            ? search_config(n1, n2, m.d0, *backend, sm)
                            : fixed_partition_fuse(n1, n2, *backend, sm, m.d0);

  std::printf("evaluated = %zu\n", result.trace.size());
  std::printf("best_d1 = %d\n", result.best_config.d1);
  std::printf("best_d2 = %d\n", result.best_config.d2);
  std::printf("best_reg_cap = %s\n",
              result.best_config.reg_cap ? std::to_string(*result.best_config.reg_cap).c_str()
                                         : "none");
  std::printf("best_cycles = %lld\n", static_cast<long long>(result.best_time));
  if (!m.trace_path.empty()) {
    write_file(m.trace_path, trace_csv(result));
    std::printf("wrote %s\n", m.trace_path.c_str());
  }
  if (!m.out_path.empty()) {
    EmitStyle style = m.style == "goto" ? EmitStyle::Goto : EmitStyle::Structured;
    write_file(m.out_path, emit_source(result.best_kernel, style));
    std::printf("wrote %s\n", m.out_path.c_str());
  }
  return 0;
}

int cmd_occupancy(const RunManifest& m) {
  SMConfig sm = SMConfig::preset_or_file(m.sm_spec);
  KernelResources res;
  if (!m.inputs.empty()) {
    LoadedKernel lk = load_kernel(m.inputs[0], m.kernel_name);
    Kernel kernel = inline_calls(lk.kernel, lk.program.functions);
    res = kernel_resources(kernel);
    std::printf("kernel = %s\n", kernel.name.c_str());
    std::printf("regs_per_thread = %d\n", res.regs_per_thread);
    std::printf("shmem_per_block = %lld\n", static_cast<long long>(res.shmem_per_block));
    std::printf("threads_per_block = %d\n", res.threads_per_block);
  } else {
    if (m.regs <= 0 || m.threads <= 0)
      fail(ErrCode::InvalidArgument, "occupancy needs a kernel file or --regs/--threads");
    res.regs_per_thread = m.regs;
    res.shmem_per_block = m.shmem;
    res.threads_per_block = m.threads;
  }
  print_occupancy(res, sm);
  return 0;
}

int cmd_check(const RunManifest& m) {
  Program program = parse_program(read_file(m.inputs[0]));
  std::printf("ok: %zu kernel(s), %zu function(s)\n", program.kernels.size(),
              program.functions.size());
  for (const auto& warning : lint_program(program))
    std::printf("lint %d:%d: %s\n", warning.pos.line, warning.pos.col,
                warning.message.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Horizontal kernel fusion toolchain for Mini-Kernel sources"};
  app.require_subcommand(1);
  RunManifest m;

  auto add_sm = [&](CLI::App* cmd) {
    cmd->add_option("--sm", m.sm_spec,
                    "machine preset (pascal-like, volta-like) or config file");
  };
  auto add_mem = [&](CLI::App* cmd) {
    cmd->add_option("--mem", m.mem_paths, "memory image file (repeatable)");
    cmd->add_option("--seed", m.seed, "seed mixed into every seeded image entry");
  };

  CLI::App* fuse = app.add_subcommand("fuse", "fuse two kernels at a fixed partition");
  fuse->add_option("kernels", m.inputs, "kernel sources")->expected(2)->required();
  fuse->add_option("--d1", m.d1, "threads for the first kernel")->required();
  fuse->add_option("--d2", m.d2, "threads for the second kernel")->required();
  fuse->add_option("--style", m.style, "goto|structured");
  fuse->add_option("-o,--out", m.out_path, "output path (default fused.cu / fused.mk)");
  fuse->add_option("--regcap", m.regcap, "n|auto|off");
  add_sm(fuse);

  CLI::App* simulate = app.add_subcommand("simulate", "run a kernel on the SM model");
  simulate->add_option("kernel", m.inputs, "kernel source(s)")->required();
  simulate->add_flag("--sequential", m.sequential, "run two kernels back to back");
  simulate->add_option("--entry", m.kernel_name, "kernel name within the file");
  simulate->add_option("--regcap", m.regcap, "n|auto|off");
  simulate->add_option("--dump-mem", m.dump_mem, "write the final memory image");
  add_mem(simulate);
  add_sm(simulate);

  CLI::App* search = app.add_subcommand("search", "sweep thread-space partitions");
  search->add_option("kernels", m.inputs, "kernel sources")->expected(2)->required();
  search->add_option("--d0", m.d0, "fused block dimension");
  search->add_option("--trace", m.trace_path, "write the evaluation trace CSV");
  search->add_option("-o,--out", m.out_path, "write the winning fused source");
  CLI::Option* style_opt = search->add_option("--style", m.style, "goto|structured");
  search->add_option("--profiler-cmd", m.profiler_cmd,
                     "external profiler command (reads a cycle count from its stdout)");
  add_mem(search);
  add_sm(search);

  CLI::App* occupancy_cmd = app.add_subcommand("occupancy", "occupancy arithmetic");
  occupancy_cmd->add_option("kernel", m.inputs, "kernel source");
  occupancy_cmd->add_option("--entry", m.kernel_name, "kernel name within the file");
  occupancy_cmd->add_option("--regs", m.regs, "registers per thread");
  occupancy_cmd->add_option("--shmem", m.shmem, "shared memory bytes per block");
  occupancy_cmd->add_option("--threads", m.threads, "threads per block");
  add_sm(occupancy_cmd);

  CLI::App* check = app.add_subcommand("check", "parse and lint a source file");
  check->add_option("file", m.inputs, "Mini-Kernel source")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (fuse->parsed()) m.command = "fuse";
    if (simulate->parsed()) m.command = "simulate";
    if (search->parsed()) {
      m.command = "search";
      if (style_opt->count() == 0) m.style = "structured";
    }
    if (occupancy_cmd->parsed()) m.command = "occupancy";
    if (check->parsed()) m.command = "check";
    m.check_inputs_exist();

    if (m.command == "fuse") return cmd_fuse(m);
    if (m.command == "simulate") {
      if (m.sequential && m.inputs.size() != 2)
        fail(ErrCode::InvalidArgument, "--sequential needs exactly two kernel files");
      if (!m.sequential && m.inputs.size() != 1)
        fail(ErrCode::InvalidArgument, "simulate takes one kernel file");
      return cmd_simulate(m);
    }
    if (m.command == "search") return cmd_search(m);
    if (m.command == "occupancy") return cmd_occupancy(m);
    if (m.command == "check") return cmd_check(m);
  } catch (const Error& e) {
    std::fprintf(stderr, "error%s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
