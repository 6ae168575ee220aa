#include "mkfuse/machine.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

namespace mkfuse {

const char* to_string(LimitingResource r) {
  switch (r) {
    case LimitingResource::Registers: return "registers";
    case LimitingResource::SharedMemory: return "shared_memory";
    case LimitingResource::Threads: return "threads";
    case LimitingResource::BlockSlots: return "block_slots";
  }
  return "?";
}

SMConfig SMConfig::pascal_like() {
  SMConfig sm;
  sm.latencies = Latencies{4, 400, 8, 48};
  return sm;
}

SMConfig SMConfig::volta_like() {
  SMConfig sm;
  sm.latencies = Latencies{4, 320, 8, 32};
  return sm;
}

void SMConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v <= 0) fail(ErrCode::InvalidArgument, std::string(name) + " must be positive");
  };
  positive(regs_per_sm, "regs_per_sm");
  positive(shmem_per_sm, "shmem_per_sm");
  positive(max_threads_per_sm, "max_threads_per_sm");
  positive(max_threads_per_block, "max_threads_per_block");
  positive(warp_size, "warp_size");
  positive(max_blocks_per_sm, "max_blocks_per_sm");
  positive(num_sms, "num_sms");
  positive(issue_slots, "issue_slots");
  positive(mem_slots_per_cycle, "mem_slots_per_cycle");
  positive(latencies.compute_cycles, "compute_cycles");
  positive(latencies.memory_cycles, "memory_cycles");
  positive(latencies.shuffle_cycles, "shuffle_cycles");
  positive(latencies.atomic_cycles, "atomic_cycles");
  if (max_threads_per_block % warp_size != 0)
    fail(ErrCode::InvalidArgument, "warp_size must divide max_threads_per_block");
}

SMConfig SMConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrCode::Io, "cannot open machine config '" + path + "'");
  SMConfig sm;  // defaults; file entries override
  std::map<std::string, int64_t*> wide = {
      {"regs_per_sm", &sm.regs_per_sm},
      {"shmem_per_sm", &sm.shmem_per_sm},
  };
  std::map<std::string, int*> narrow = {
      {"max_threads_per_sm", &sm.max_threads_per_sm},
      {"max_threads_per_block", &sm.max_threads_per_block},
      {"warp_size", &sm.warp_size},
      {"max_blocks_per_sm", &sm.max_blocks_per_sm},
      {"num_sms", &sm.num_sms},
      {"issue_slots", &sm.issue_slots},
      {"mem_slots_per_cycle", &sm.mem_slots_per_cycle},
      {"compute_cycles", &sm.latencies.compute_cycles},
      {"memory_cycles", &sm.latencies.memory_cycles},
      {"shuffle_cycles", &sm.latencies.shuffle_cycles},
      {"atomic_cycles", &sm.latencies.atomic_cycles},
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string key, eq;
    int64_t value;
    if (!(row >> key)) continue;
    if (!(row >> eq >> value) || eq != "=")
      fail(ErrCode::Io, "bad config line in '" + path + "'", SourcePos{lineno, 1});
    if (auto it = wide.find(key); it != wide.end()) {
      *it->second = value;
    } else if (auto it2 = narrow.find(key); it2 != narrow.end()) {
      *it2->second = static_cast<int>(value);
    } else {
      fail(ErrCode::Io, "unknown config key '" + key + "' in '" + path + "'",
           SourcePos{lineno, 1});
    }
  }
  sm.validate();
  return sm;
}

SMConfig SMConfig::preset_or_file(const std::string& spec) {
  if (spec.empty() || spec == "pascal-like") return pascal_like();
  if (spec == "volta-like") return volta_like();
  return from_file(spec);
}

// ---------------------------------------------------------------------------
// Register estimation
// ---------------------------------------------------------------------------

namespace {

constexpr int kBaseRegisterOverhead = 8;  // builtins, addresses, guard temps

struct LivenessScan {
  struct Interval {
    int first = -1;
    int last = -1;
  };
  std::vector<Interval> intervals;
  std::vector<std::map<std::string, int>> scopes;
  int step = 0;

  int resolve(const std::string& name) const {
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return found->second;
    }
    return -1;  // param or shared array
  }

  void touch(int id) {
    if (id < 0) return;
    auto& iv = intervals[id];
    if (iv.first < 0) iv.first = step;
    iv.last = step;
  }

  void expr(const Expr& e) {
    for_each_subexpr(e, [&](const Expr& sub) {
      if (const auto* ref = std::get_if<VarRef>(&sub.node)) touch(resolve(ref->name));
      if (const auto* idx = std::get_if<IndexExpr>(&sub.node)) touch(resolve(idx->array));
    });
  }

  void stmt(const Stmt& s) {
    ++step;
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, DeclStmt>) {
            if (node.init) expr(*node.init);
            int id = static_cast<int>(intervals.size());
            intervals.emplace_back();
            scopes.back()[node.name] = id;
            if (node.init) touch(id);  // untouched bare declarations never go live
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            touch(resolve(node.target.name));
            if (node.target.index) expr(*node.target.index);
            expr(*node.value);
          } else if constexpr (std::is_same_v<T, IfStmt>) {
            expr(*node.cond);
            block(node.then_body);
            if (node.else_body) block(*node.else_body);
          } else if constexpr (std::is_same_v<T, ForStmt>) {
            scopes.emplace_back();
            stmt(*node.init);
            expr(*node.cond);
            stmt(*node.step);
            block(node.body);
            scopes.pop_back();
          } else if constexpr (std::is_same_v<T, WhileStmt>) {
            expr(*node.cond);
            block(node.body);
          } else if constexpr (std::is_same_v<T, AtomicAddStmt>) {
            touch(resolve(node.target.name));
            if (node.target.index) expr(*node.target.index);
            expr(*node.value);
          } else if constexpr (std::is_same_v<T, ReturnStmt>) {
            if (node.value) expr(*node.value);
          } else if constexpr (std::is_same_v<T, CallStmt>) {
            for (const auto& a : node.args) expr(a);
          }
        },
        s.node);
  }

  void block(const StmtBlock& b) {
    scopes.emplace_back();
    for (const auto& s : b.stmts) stmt(s);
    scopes.pop_back();
  }

  int max_overlap() const {
    // sweep over interval endpoints
    std::vector<std::pair<int, int>> events;  // (step, +1/-1)
    for (const auto& iv : intervals) {
      if (iv.first < 0) continue;
      events.emplace_back(iv.first, 1);
      events.emplace_back(iv.last + 1, -1);
    }
    std::sort(events.begin(), events.end());
    int live = 0, peak = 0;
    for (const auto& [at, delta] : events) {
      (void)at;
      live += delta;
      peak = std::max(peak, live);
    }
    return peak;
  }
};

}  // namespace

int estimate_registers(const Kernel& kernel) {
  if (kernel.meta.regs) return *kernel.meta.regs;
  LivenessScan scan;
  scan.block(kernel.body);
  return scan.max_overlap() + kBaseRegisterOverhead;
}

KernelResources kernel_resources(const Kernel& kernel, std::optional<int> threads_override) {
  KernelResources r;
  r.regs_per_thread = estimate_registers(kernel);
  r.shmem_per_block = 0;
  for (const auto& sh : kernel.shared_decls) r.shmem_per_block += sh.length * 4;
  r.threads_per_block =
      threads_override ? *threads_override : static_cast<int>(kernel.block_dims.count());
  return r;
}

// ---------------------------------------------------------------------------
// Occupancy arithmetic
// ---------------------------------------------------------------------------

OccupancyReport occupancy(const KernelResources& r, const SMConfig& sm) {
  if (r.regs_per_thread <= 0 || r.threads_per_block <= 0 || r.shmem_per_block < 0)
    fail(ErrCode::InvalidArgument, "kernel resources must be positive");

  constexpr int64_t kUnbounded = std::numeric_limits<int64_t>::max();
  int64_t quotients[4];
  quotients[0] = sm.regs_per_sm / (int64_t(r.regs_per_thread) * r.threads_per_block);
  quotients[1] = r.shmem_per_block == 0 ? kUnbounded : sm.shmem_per_sm / r.shmem_per_block;
  quotients[2] = sm.max_threads_per_sm / r.threads_per_block;
  quotients[3] = sm.max_blocks_per_sm;

  int64_t blocks = *std::min_element(quotients, quotients + 4);
  if (blocks <= 0)
    fail(ErrCode::DoesNotFit, "kernel does not fit on one SM even once (" +
                                  std::to_string(r.regs_per_thread) + " regs, " +
                                  std::to_string(r.shmem_per_block) + " B shared, " +
                                  std::to_string(r.threads_per_block) + " threads)");

  OccupancyReport report;
  report.blocks_per_sm = static_cast<int>(blocks);
  for (int i = 0; i < 4; ++i) {
    if (quotients[i] == blocks) {
      report.limiting = static_cast<LimitingResource>(i);
      break;
    }
  }
  int warps_per_block = (r.threads_per_block + sm.warp_size - 1) / sm.warp_size;
  report.achieved_warps = report.blocks_per_sm * warps_per_block;
  report.occupancy_fraction =
      double(int64_t(report.blocks_per_sm) * r.threads_per_block) / sm.max_threads_per_sm;
  return report;
}

int register_bound(const KernelResources& r1, const KernelResources& r2,
                   int64_t fused_shmem, int d0, const SMConfig& sm) {
  if (d0 != r1.threads_per_block + r2.threads_per_block)
    fail(ErrCode::InvalidArgument,
         "d0 must equal the sum of the constituent thread counts");
  constexpr int64_t kUnbounded = std::numeric_limits<int64_t>::max();
  int64_t b1 = sm.regs_per_sm / (int64_t(r1.threads_per_block) * r1.regs_per_thread);
  int64_t b2 = sm.regs_per_sm / (int64_t(r2.threads_per_block) * r2.regs_per_thread);
  int64_t shmem_q = fused_shmem == 0 ? kUnbounded : sm.shmem_per_sm / fused_shmem;
  int64_t threads_q = sm.max_threads_per_sm / d0;
  int64_t b0 = std::min(std::min(b1, b2), std::min(shmem_q, threads_q));
  if (b0 <= 0)
    fail(ErrCode::DoesNotFit, "no register bound can make the fused kernel resident");
  return static_cast<int>(sm.regs_per_sm / (b0 * d0));
}

double combined_utilization(double util1, int64_t cycles1, double util2, int64_t cycles2) {
  if (cycles1 <= 0 || cycles2 <= 0)
    fail(ErrCode::InvalidArgument, "combined utilization needs positive cycle counts");
  return (util1 * double(cycles1) + util2 * double(cycles2)) / double(cycles1 + cycles2);
}

}  // namespace mkfuse
