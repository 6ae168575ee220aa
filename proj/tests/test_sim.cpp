#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace mkfuse;
using mkfuse::testing::corpus_image;
using mkfuse::testing::load_corpus_kernel;
using mkfuse::testing::load_normalized;
using mkfuse::testing::pair_image;

namespace {

Kernel parse_kernel(const std::string& src) {
  Program p = parse_program(src);
  return p.kernels.front();
}

SMConfig one_slot_sm() {
  SMConfig sm = SMConfig::pascal_like();  // compute 4, memory 400
  sm.issue_slots = 1;
  return sm;
}

}  // namespace

TEST(Functional, VectorAddExactSums) {
  Kernel k = load_corpus_kernel("vector_add");
  MemoryImage mem = corpus_image("vector_add");
  MemoryImage out = run_functional(k, launch_for(k), mem);
  const auto& a = mem.arrays.at("vadd_a").floats;
  const auto& b = mem.arrays.at("vadd_b").floats;
  const auto& c = out.arrays.at("vadd_c").floats;
  ASSERT_EQ(c.size(), 1024u);
  for (size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], a[i] + b[i]) << i;
}

TEST(Functional, ShuffleXorSwapsLanePairs) {
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (32,1,1) {"
      " int lane = threadIdx.x;"
      " out[lane] = warp_shfl_xor(lane, 1); }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 32);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(out.arrays.at("out").ints[size_t(i)], i ^ 1);
}

TEST(Functional, BatchnormMatchesSequentialOracle) {
  Kernel k = load_corpus_kernel("batchnorm");
  MemoryImage mem = corpus_image("batchnorm");
  MemoryImage out = run_functional(k, launch_for(k), mem);

  // independent straight-line recomputation over the same input
  const auto& in = mem.arrays.at("bn_in").ints;
  double sum = 0;
  for (int32_t v : in) sum += v;
  double mean = sum / double(in.size());
  double varsum = 0;
  for (int32_t v : in) varsum += (v - mean) * (v - mean);
  double variance = varsum / double(in.size());

  float got_mean = out.arrays.at("bn_out").floats[0];
  float got_var = out.arrays.at("bn_out").floats[1];
  EXPECT_NEAR(got_mean, mean, std::abs(mean) * 1e-3 + 1e-3);
  EXPECT_NEAR(got_var, variance, std::abs(variance) * 1e-3 + 1e-3);
}

TEST(Functional, StridedSumMatchesDirectSum) {
  Kernel k = load_corpus_kernel("strided_sum");
  MemoryImage mem = corpus_image("strided_sum");
  MemoryImage out = run_functional(k, launch_for(k), mem);
  int64_t direct = 0;
  for (int32_t v : mem.arrays.at("ssum_in").ints) direct += v;
  EXPECT_EQ(out.arrays.at("ssum_out").ints[0], int32_t(direct));
}

TEST(Functional, MultiBlockGridBuiltins) {
  Kernel k = parse_kernel(
      "//@ grid=4\n"
      "kernel k(int out[]) dims (32,1,1) {"
      " out[blockIdx.x * blockDim.x + threadIdx.x] ="
      "   blockIdx.x * 100 + threadIdx.x + gridDim.x; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 128);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int b = 0; b < 4; ++b)
    for (int t = 0; t < 32; ++t)
      EXPECT_EQ(out.arrays.at("out").ints[size_t(b * 32 + t)], b * 100 + t + 4);
}

TEST(Functional, OutOfBoundsNamesArray) {
  Kernel k = parse_kernel(
      "kernel k(int g[]) dims (32,1,1) { g[threadIdx.x + 40] = 1; }");
  MemoryImage mem;
  mem.add_zero_array("g", ScalarType::Int32, 64);
  try {
    run_functional(k, launch_for(k), mem);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::OutOfBounds);
    EXPECT_NE(e.message().find("'g'"), std::string::npos);
  }
}

TEST(Functional, DivergentBarrierIsAnError) {
  Kernel k = parse_kernel(
      "kernel k() dims (32,1,1) { if (threadIdx.x < 16) { syncthreads(); } }");
  MemoryImage mem;
  try {
    run_functional(k, launch_for(k), mem);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::DivergentBarrier);
  }
}

TEST(Functional, DivideByZeroIsAnError) {
  Kernel k = parse_kernel("kernel k(int g[]) dims (32,1,1) { g[0] = 1 / g[1]; }");
  MemoryImage mem;
  mem.add_zero_array("g", ScalarType::Int32, 2);
  EXPECT_THROW(run_functional(k, launch_for(k), mem), Error);
}

TEST(Functional, WhileLoopAndCasts) {
  Kernel k = parse_kernel(
      "kernel k(int out[], float fout[]) dims (32,1,1) {"
      " int i = 0;"
      " int acc = 0;"
      " while (i < threadIdx.x) {"
      "   acc = acc + i;"
      "   i = i + 1;"
      " }"
      " out[threadIdx.x] = acc;"
      " fout[threadIdx.x] = float(acc) * 0.5;"
      " out[threadIdx.x] = out[threadIdx.x] + int(2.75); }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 32);
  mem.add_zero_array("fout", ScalarType::Float32, 32);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int t = 0; t < 32; ++t) {
    int acc = t * (t - 1) / 2;
    EXPECT_EQ(out.arrays.at("out").ints[size_t(t)], acc + 2);
    EXPECT_EQ(out.arrays.at("fout").floats[size_t(t)], float(acc) * 0.5f);
  }
}

TEST(Functional, GotoLoopWithDivergentExit) {
  // hand-written goto loop; lanes exit at different trip counts
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (32,1,1) {"
      " int i = 0;"
      " top:"
      " i = i + 1;"
      " if (i < threadIdx.x + 1) { goto top; }"
      " out[threadIdx.x] = i; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 32);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int t = 0; t < 32; ++t)
    EXPECT_EQ(out.arrays.at("out").ints[size_t(t)], std::max(1, t + 1));
}

TEST(Functional, NestedDivergenceReconverges) {
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (64,1,1) {"
      " int t = threadIdx.x;"
      " int r = 0;"
      " if (t % 2 == 0) {"
      "   if (t % 4 == 0) { r = 1; } else { r = 2; }"
      " } else {"
      "   int j = 0;"
      "   while (j < t % 8) {"
      "     r = r + j;"
      "     j = j + 1;"
      "   }"
      " }"
      " out[t] = r + 100; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 64);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int t = 0; t < 64; ++t) {
    int r = 0;
    if (t % 2 == 0) {
      r = t % 4 == 0 ? 1 : 2;
    } else {
      for (int j = 0; j < t % 8; ++j) r += j;
    }
    EXPECT_EQ(out.arrays.at("out").ints[size_t(t)], r + 100) << t;
  }
}

TEST(Functional, IntegerSemanticsArePinned) {
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (32,1,1) {"
      " out[0] = -7 / 2;"
      " out[1] = -7 % 2;"
      " out[2] = 1 << 33;"       // shift count masked to 1
      " out[3] = -8 >> 1;"       // arithmetic shift
      " out[4] = 2147483647 + 1;"
      " out[5] = min(-3, 4);"
      " out[6] = max(-3, 4);"
      " out[7] = int(float(5)); }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 8);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  const auto& v = out.arrays.at("out").ints;
  EXPECT_EQ(v[0], -3);  // truncation toward zero
  EXPECT_EQ(v[1], -1);
  EXPECT_EQ(v[2], 2);
  EXPECT_EQ(v[3], -4);
  EXPECT_EQ(v[4], std::numeric_limits<int32_t>::min());  // wrapping add
  EXPECT_EQ(v[5], -3);
  EXPECT_EQ(v[6], 4);
  EXPECT_EQ(v[7], 5);
}

TEST(Timed, MultiSmDistributesBlocks) {
  // 1024-thread blocks keep at most two resident per SM; four blocks of
  // dependent compute saturate the issue slots, so two SMs finish sooner
  Kernel k = parse_kernel(
      "//@ grid=4\n"
      "kernel k(int out[]) dims (1024,1,1) {"
      " int gid = blockIdx.x * blockDim.x + threadIdx.x;"
      " int x = gid;"
      " x = x * 3 + 1;"
      " x = x * 3 + 1;"
      " x = x * 3 + 1;"
      " x = x * 3 + 1;"
      " x = x * 3 + 1;"
      " x = x * 3 + 1;"
      " out[gid] = x; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 4096);
  SMConfig two_sms = SMConfig::pascal_like();
  two_sms.num_sms = 2;
  auto [timed, profile] = run_timed(k, launch_for(k), two_sms, mem);
  MemoryImage functional = run_functional(k, launch_for(k), mem);
  EXPECT_EQ(timed.digest(), functional.digest());
  auto [single, single_profile] = run_timed(k, launch_for(k), SMConfig::pascal_like(), mem);
  EXPECT_EQ(single.digest(), functional.digest());
  EXPECT_LT(profile.elapsed_cycles, single_profile.elapsed_cycles);
}

// ---------------------------------------------------------------------------
// Deadlock detection
// ---------------------------------------------------------------------------

TEST(Deadlock, MiscountedFusionReportsArrivals) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  FusedKernel fused = generate_fused(bn, hist, 896, 128, SMConfig::pascal_like());
  // guard admits only 864 threads while the barriers still declare 896
  fused.guard1 = make_binary(BinaryOp::Lt, make_var("global_tid"), make_int(864));
  DeadlockReport report =
      detect_deadlock(fused, launch_for(fused), pair_image("batchnorm", "histogram"));
  EXPECT_TRUE(report.deadlocked);
  EXPECT_EQ(report.barrier_id, 1);
  EXPECT_EQ(report.arrived, 864);
  EXPECT_EQ(report.expected, 896);
}

TEST(Deadlock, WellFormedFusionIsClean) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  FusedKernel fused = generate_fused(bn, hist, 896, 128, SMConfig::pascal_like());
  DeadlockReport report =
      detect_deadlock(fused, launch_for(fused), pair_image("batchnorm", "histogram"));
  EXPECT_FALSE(report.deadlocked);
}

TEST(Deadlock, FullBlockSyncIsClean) {
  Kernel k = load_corpus_kernel("histogram");
  DeadlockReport report =
      detect_deadlock(k, launch_for(k), corpus_image("histogram"));
  EXPECT_FALSE(report.deadlocked);
}

TEST(Functional, PartialBarrierHoldsUntilAllArrive) {
  // every thread stages a value before the barrier and reads another
  // warp's slot after it; a leaky barrier would observe zeros
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (64,1,1) {"
      " shared int stage[64];"
      " int t = threadIdx.x;"
      " stage[t] = t + 1;"
      " bar_sync(3, 64);"
      " out[t] = stage[63 - t]; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 64);
  MemoryImage out = run_functional(k, launch_for(k), mem);
  for (int t = 0; t < 64; ++t)
    EXPECT_EQ(out.arrays.at("out").ints[size_t(t)], 63 - t + 1);
}

// ---------------------------------------------------------------------------
// Timed model
// ---------------------------------------------------------------------------

TEST(Timed, DependentChainClosedForm) {
  // Pipeline arithmetic with one warp on one issue slot, compute latency 4:
  // 10 dependent compute micro-ops (init assign, four Bin+assign pairs,
  // final assign) issue at 0, 4, ..., 36; the fire-and-forget store issues
  // at 40 and completes at 41; the implicit return issues at 41 and
  // completes at 45. 12 issues over 45 cycles.
  Kernel k = parse_kernel(
      "kernel k(int out[]) dims (32,1,1) {"
      " int x = 1;"
      " x = x + 1;"
      " x = x + 1;"
      " x = x + 1;"
      " x = x + 1;"
      " out[0] = x; }");
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 1);
  auto [out, profile] = run_timed(k, launch_for(k), one_slot_sm(), mem);
  EXPECT_EQ(out.arrays.at("out").ints[0], 5);
  EXPECT_EQ(profile.elapsed_cycles, 10 * 4 + 1 + 4);
  EXPECT_DOUBLE_EQ(profile.issue_slot_utilization, 12.0 / 45.0);
  EXPECT_EQ(profile.spill_loads_stores, 0);
}

TEST(Timed, SecondWarpRoughlyDoublesUtilization) {
  auto source = [](int threads) {
    return "kernel k(int out[]) dims (" + std::to_string(threads) +
           ",1,1) {"
           " int x = 1;"
           " x = x + 1;"
           " x = x + 1;"
           " x = x + 1;"
           " x = x + 1;"
           " out[threadIdx.x / 32] = x; }";
  };
  MemoryImage mem;
  mem.add_zero_array("out", ScalarType::Int32, 2);
  Kernel one = parse_kernel(source(32));
  Kernel two = parse_kernel(source(64));
  auto [o1, p1] = run_timed(one, launch_for(one), one_slot_sm(), mem);
  auto [o2, p2] = run_timed(two, launch_for(two), one_slot_sm(), mem);
  double ratio = p2.issue_slot_utilization / p1.issue_slot_utilization;
  EXPECT_GE(ratio, 1.7);
  EXPECT_LE(ratio, 2.05);
  EXPECT_LE(p2.elapsed_cycles, p1.elapsed_cycles + 8);  // latency hidden, not added
}

TEST(Timed, MemoryBoundLoopStallsOnMemory) {
  Kernel k = parse_kernel(
      "kernel k(int g[]) dims (32,1,1) {"
      " int s = 0;"
      " for (int i = 0; i < 64; i = i + 1) { s = s + g[i]; }"
      " g[0] = s; }");
  MemoryImage mem;
  mem.add_int_array("g", 64, 11, 0, 9);
  auto [out, profile] = run_timed(k, launch_for(k), SMConfig::pascal_like(), mem);
  (void)out;
  EXPECT_GT(profile.meminst_stall_fraction, 0.9);
  // 64 blocking loads at 400 cycles dominate
  EXPECT_GT(profile.elapsed_cycles, 64 * 400);
}

TEST(Timed, MatchesFunctionalOnCorpus) {
  for (const char* stem : {"vector_add", "strided_sum", "histogram", "batchnorm",
                           "shuffle_reduce", "streamer", "hasher", "empty"}) {
    Kernel k = load_corpus_kernel(stem);
    MemoryImage mem = corpus_image(stem);
    MemoryImage functional = run_functional(k, launch_for(k), mem);
    auto [timed, profile] = run_timed(k, launch_for(k), SMConfig::pascal_like(), mem);
    EXPECT_EQ(functional.digest(), timed.digest()) << stem;
    EXPECT_LE(profile.issue_slot_utilization, 1.0) << stem;
    EXPECT_GE(profile.elapsed_cycles, 1) << stem;
  }
}

TEST(Timed, DeterministicAcrossRuns) {
  Kernel k = load_corpus_kernel("histogram");
  MemoryImage mem = corpus_image("histogram");
  auto [m1, p1] = run_timed(k, launch_for(k), SMConfig::pascal_like(), mem);
  auto [m2, p2] = run_timed(k, launch_for(k), SMConfig::pascal_like(), mem);
  EXPECT_EQ(m1.digest(), m2.digest());
  EXPECT_EQ(profile_report(p1), profile_report(p2));
}

TEST(Timed, RegCapSpillsAndSlowsTheHasher) {
  Kernel k = load_corpus_kernel("hasher");
  MemoryImage mem = corpus_image("hasher");
  LaunchConfig plain = launch_for(k);
  auto [m1, uncapped] = run_timed(k, plain, SMConfig::pascal_like(), mem);
  LaunchConfig capped = plain;
  capped.reg_cap = 16;
  auto [m2, with_cap] = run_timed(k, capped, SMConfig::pascal_like(), mem);
  EXPECT_EQ(m1.digest(), m2.digest());  // spilling never changes results
  EXPECT_EQ(uncapped.spill_loads_stores, 0);
  EXPECT_GT(with_cap.spill_loads_stores, 0);
  EXPECT_GT(with_cap.elapsed_cycles, uncapped.elapsed_cycles);
}

TEST(Timed, VerticalConcatenationBaseline) {
  // trivial vertical baseline: same block dims, one thread runs both
  // bodies back to back. Functionally equivalent, but the phases stay
  // aligned across warps, so the mixed pair cannot interleave memory waits
  // with the other kernel's compute the way the horizontal fusion does.
  SMConfig sm = SMConfig::pascal_like();
  Kernel streamer = load_normalized("streamer", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  ASSERT_TRUE(streamer.block_dims == hasher.block_dims);

  Kernel vertical;
  vertical.name = "vertical_streamer_hasher";
  vertical.block_dims = streamer.block_dims;
  vertical.tunable = false;
  vertical.params = streamer.params;
  for (const auto& p : hasher.params) vertical.params.push_back(p);
  vertical.shared_decls = streamer.shared_decls;
  for (const auto& sh : hasher.shared_decls) vertical.shared_decls.push_back(sh);
  std::vector<Stmt> decls, rest;
  auto split = [&](const Kernel& k) {
    size_t i = 0;
    for (; i < k.body.stmts.size() && std::get_if<DeclStmt>(&k.body.stmts[i].node); ++i)
      decls.push_back(k.body.stmts[i]);
    for (; i < k.body.stmts.size(); ++i) rest.push_back(k.body.stmts[i]);
  };
  split(streamer);
  split(hasher);
  for (auto& s : decls) vertical.body.stmts.push_back(std::move(s));
  for (auto& s : rest) vertical.body.stmts.push_back(std::move(s));
  ASSERT_TRUE(has_decl_prefix_form(vertical));

  MemoryImage mem = pair_image("streamer", "hasher");
  auto [vert_mem, vert_profile] = run_timed(vertical, launch_for(vertical), sm, mem);
  MemoryImage sequential =
      run_functional(hasher, launch_for(hasher), run_functional(streamer, launch_for(streamer), mem));
  EXPECT_EQ(vert_mem.digest(), sequential.digest());

  FusedKernel horizontal = generate_fused(streamer, hasher, 512, 512, sm);
  auto [horiz_mem, horiz_profile] = run_timed(horizontal, launch_for(horizontal), sm, mem);
  EXPECT_EQ(horiz_mem.digest(), sequential.digest());
  EXPECT_LT(horiz_profile.elapsed_cycles, vert_profile.elapsed_cycles);
}

TEST(Timed, LatencyHidingLaw) {
  SMConfig sm = SMConfig::pascal_like();
  Kernel streamer = load_normalized("streamer", "k1_");
  Kernel hasher = load_normalized("hasher", "k2_");
  MemoryImage mem = pair_image("streamer", "hasher");

  auto cycles_of = [&](const Kernel& k) {
    return run_timed(k, launch_for(k), sm, mem).second.elapsed_cycles;
  };
  int64_t t_streamer = cycles_of(streamer);
  int64_t t_hasher = cycles_of(hasher);

  FusedKernel mixed = generate_fused(streamer, hasher, 512, 512, sm);
  int64_t t_mixed = run_timed(mixed, launch_for(mixed), sm, mem).second.elapsed_cycles;
  EXPECT_LT(t_mixed, t_streamer + t_hasher);

  Kernel hasher1 = load_normalized("hasher", "k1_");
  FusedKernel compute_pair = generate_fused(hasher1, hasher, 512, 512, sm);
  int64_t t_cc = run_timed(compute_pair, launch_for(compute_pair), sm,
                           corpus_image("hasher"))
                     .second.elapsed_cycles;
  EXPECT_GE(double(t_cc), 0.95 * double(2 * t_hasher));
}
