#include <gtest/gtest.h>

#include <set>

#include "mkfuse/search.hpp"
#include "test_support.hpp"

using namespace mkfuse;
using mkfuse::testing::load_normalized;
using mkfuse::testing::pair_image;

namespace {

SMConfig sm() { return SMConfig::pascal_like(); }

SimulatorBackend backend_for(const std::string& a, const std::string& b) {
  return SimulatorBackend(sm(), pair_image(a, b));
}

}  // namespace

TEST(Search, MotivatingPairTraceComplete) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  SimulatorBackend backend = backend_for("batchnorm", "histogram");
  SearchResult result = search_config(bn, hist, 1024, backend, sm());

  EXPECT_EQ(result.trace.size(), 14u);  // (1024/128 - 1) partitions, two variants each
  std::set<int> d1_values;
  std::map<int, int> variants_per_d1;
  int64_t min_cycles = INT64_MAX;
  for (const auto& point : result.trace) {
    d1_values.insert(point.config.d1);
    variants_per_d1[point.config.d1]++;
    min_cycles = std::min(min_cycles, point.cycles);
    EXPECT_EQ(point.config.d0, 1024);
    EXPECT_EQ(point.config.d1 + point.config.d2, 1024);
    EXPECT_EQ(point.config.d1 % 32, 0);
    EXPECT_GE(point.config.d1, 32);
    EXPECT_GE(point.config.d2, 32);
  }
  EXPECT_EQ(d1_values.size(), 7u);
  for (const auto& [d1, variants] : variants_per_d1) EXPECT_EQ(variants, 2) << d1;
  EXPECT_EQ(result.best_time, min_cycles);

  // re-evaluating the winner reproduces its time exactly
  EvalOutcome again = backend.evaluate(result.best_kernel, result.best_config);
  EXPECT_EQ(again.cycles, result.best_time);
}

TEST(Search, SmallestSweepHasOnePartition) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  SimulatorBackend backend = backend_for("batchnorm", "histogram");
  SearchResult result = search_config(bn, hist, 256, backend, sm());
  EXPECT_EQ(result.trace.size(), 2u);
  EXPECT_EQ(result.trace[0].config.d1, 128);
  EXPECT_EQ(result.trace[1].config.d1, 128);
  EXPECT_FALSE(result.trace[0].config.reg_cap.has_value());
  EXPECT_TRUE(result.trace[1].config.reg_cap.has_value());
}

TEST(Search, WinnerMinimalWithinExhaustiveOracle) {
  // brute force over every warp-aligned split with the same backend; the
  // search winner must be minimal among the 128-aligned points
  Kernel vadd = load_normalized("vector_add", "k1_");
  Kernel ssum = load_normalized("strided_sum", "k2_");
  SimulatorBackend backend = backend_for("vector_add", "strided_sum");
  const int d0 = 384;
  SearchResult result = search_config(vadd, ssum, d0, backend, sm());

  int64_t oracle_best = INT64_MAX;
  for (int d1 = 32; d1 < d0; d1 += 32) {
    if (d1 % 128 != 0) continue;  // restrict to the search's granularity
    FusedKernel fused = generate_fused(vadd, ssum, d1, d0 - d1, sm());
    oracle_best = std::min(oracle_best, backend.evaluate(fused, fused.config).cycles);
    KernelResources r1 = kernel_resources(vadd, d1);
    KernelResources r2 = kernel_resources(ssum, d0 - d1);
    int64_t shmem = 0;
    for (const auto& sh : fused.shared_decls) shmem += sh.length * 4;
    FusionConfig capped = fused.config;
    capped.reg_cap = register_bound(r1, r2, shmem, d0, sm());
    FusedKernel fc = fused;
    fc.config = capped;
    oracle_best = std::min(oracle_best, backend.evaluate(fc, capped).cycles);
  }
  EXPECT_EQ(result.best_time, oracle_best);
}

TEST(Search, RequiresTunableKernelsAndValidD0) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  SimulatorBackend backend = backend_for("batchnorm", "hasher");
  EXPECT_THROW(search_config(bn, hasher, 1024, backend, sm()), Error);
  Kernel hist = load_normalized("histogram", "k2_");
  EXPECT_THROW(search_config(bn, hist, 1000, backend, sm()), Error);
  EXPECT_THROW(search_config(bn, hist, 128, backend, sm()), Error);
}

TEST(FixedPartition, BothFixedSplitEvenly) {
  Kernel streamer = load_normalized("streamer", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  SimulatorBackend backend = backend_for("streamer", "hasher");
  SearchResult result = fixed_partition_fuse(streamer, hasher, backend, sm());
  EXPECT_EQ(result.trace.size(), 2u);
  EXPECT_EQ(result.best_config.d1, 512);
  EXPECT_EQ(result.best_config.d2, 512);
  EXPECT_FALSE(result.trace[0].config.reg_cap.has_value());
  EXPECT_TRUE(result.trace[1].config.reg_cap.has_value());
  int64_t min_cycles = std::min(result.trace[0].cycles, result.trace[1].cycles);
  EXPECT_EQ(result.best_time, min_cycles);
}

TEST(FixedPartition, OversizedFixedPairRejected) {
  Program p = parse_program(
      "kernel a() dims (896,1,1) fixed {}\n"
      "kernel b() dims (256,1,1) fixed {}");
  Kernel a = normalize_kernel(p.kernels[0], {}, "k1_");
  Kernel b = normalize_kernel(p.kernels[1], {}, "k2_");
  MemoryImage empty;
  SimulatorBackend backend(sm(), empty);
  try {
    fixed_partition_fuse(a, b, backend, sm());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::IncompatibleFixedDims);
  }
}

TEST(FixedPartition, TunableSideTakesTheRemainder) {
  Kernel streamer = load_normalized("streamer", "k1_");  // fixed 512
  Kernel vadd = load_normalized("vector_add", "k2_");    // tunable
  MemoryImage mem = pair_image("streamer", "vector_add");
  SimulatorBackend backend(sm(), mem);
  SearchResult result = fixed_partition_fuse(streamer, vadd, backend, sm(), 1024);
  EXPECT_EQ(result.best_config.d1, 512);
  EXPECT_EQ(result.best_config.d2, 512);  // d0 - 512
  EXPECT_EQ(result.trace.size(), 2u);
}

TEST(Search, TraceCsvShape) {
  Kernel streamer = load_normalized("streamer", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  SimulatorBackend backend = backend_for("streamer", "hasher");
  SearchResult result = fixed_partition_fuse(streamer, hasher, backend, sm());
  std::string csv = trace_csv(result);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "d1,d2,reg_cap,cycles,occupancy,utilization");
  int rows = 0;
  bool saw_none = false, saw_cap = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",none,") != std::string::npos) saw_none = true;
    if (line.find(",32,") != std::string::npos) saw_cap = true;
  }
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(saw_none);
  EXPECT_TRUE(saw_cap);
}

TEST(Search, FoldMatchesArgminOverCompleteTrace) {
  // the winner must equal an order-independent argmin over the trace with
  // the (cycles, smaller d1, no-cap) preference
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  SimulatorBackend backend = backend_for("batchnorm", "histogram");
  SearchResult result = search_config(bn, hist, 1024, backend, sm());

  auto key = [](const EvalPoint& p) {
    return std::make_tuple(p.cycles, p.config.d1, p.config.reg_cap.has_value() ? 1 : 0);
  };
  const EvalPoint* best = &result.trace.front();
  for (const auto& point : result.trace)
    if (key(point) < key(*best)) best = &point;
  EXPECT_EQ(result.best_time, best->cycles);
  EXPECT_EQ(result.best_config.d1, best->config.d1);
  EXPECT_EQ(result.best_config.reg_cap, best->config.reg_cap);
}

TEST(ExternalBackend, ReadsCycleCountFromCommand) {
  Kernel streamer = load_normalized("streamer", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  FusedKernel fused = generate_fused(streamer, hasher, 512, 512, sm());
  ExternalCommandBackend backend("echo 4242 ;true");
  EvalOutcome out = backend.evaluate(fused, fused.config);
  EXPECT_EQ(out.cycles, 4242);
}
