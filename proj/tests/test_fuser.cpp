#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mkfuse;
using mkfuse::testing::corpus_image;
using mkfuse::testing::load_corpus_program;
using mkfuse::testing::load_normalized;
using mkfuse::testing::pair_image;
using mkfuse::testing::read_file;

#ifndef MKFUSE_GOLDEN_DIR
#define MKFUSE_GOLDEN_DIR "tests/golden"
#endif

namespace {

SMConfig sm() { return SMConfig::pascal_like(); }

/// Runs a prologue block against every thread id and returns the six remap
/// values per thread.
struct RemapDump {
  std::vector<int32_t> tx, ty, tz, bx, by, bz;
};

RemapDump run_prologue(Dim3 dims1, Dim3 dims2, int d1) {
  int d0 = int(dims1.count() + dims2.count());
  Kernel probe;
  probe.name = "probe";
  probe.block_dims = Dim3{d0, 1, 1};
  for (const char* name : {"otx", "oty", "otz", "obx", "oby", "obz"})
    probe.params.push_back(Param{name, ParamKind::ArrayInt, {}});
  probe.body = build_prologue(dims1, dims2, d1);
  auto emit_store = [&](const char* array, const char* var) {
    probe.body.stmts.push_back(
        make_assign_index(array, make_var("global_tid"), make_var(var)));
  };
  emit_store("otx", "threadIdx_x");
  emit_store("oty", "threadIdx_y");
  emit_store("otz", "threadIdx_z");
  emit_store("obx", "blockDim_x");
  emit_store("oby", "blockDim_y");
  emit_store("obz", "blockDim_z");

  MemoryImage mem;
  for (const char* name : {"otx", "oty", "otz", "obx", "oby", "obz"})
    mem.add_zero_array(name, ScalarType::Int32, d0);
  MemoryImage out = run_functional(probe, launch_for(probe), mem);
  RemapDump dump;
  dump.tx = out.arrays.at("otx").ints;
  dump.ty = out.arrays.at("oty").ints;
  dump.tz = out.arrays.at("otz").ints;
  dump.bx = out.arrays.at("obx").ints;
  dump.by = out.arrays.at("oby").ints;
  dump.bz = out.arrays.at("obz").ints;
  return dump;
}

int count_builtin_remap_targets(const StmtBlock& body) {
  int n = 0;
  for_each_stmt(body, [&](const Stmt& s) {
    for_each_expr_shallow(s, [&](const Expr& e) {
      for_each_subexpr(e, [&](const Expr& sub) {
        if (const auto* ref = std::get_if<BuiltinRef>(&sub.node)) {
          switch (ref->builtin) {
            case BuiltinVar::ThreadIdxX:
            case BuiltinVar::ThreadIdxY:
            case BuiltinVar::ThreadIdxZ:
            case BuiltinVar::BlockDimX:
            case BuiltinVar::BlockDimY:
            case BuiltinVar::BlockDimZ:
              ++n;
              break;
            default:
              break;
          }
        }
      });
    });
  });
  return n;
}

int count_barriers(const StmtBlock& body) {
  int n = 0;
  for_each_stmt(body, [&](const Stmt& s) {
    if (std::get_if<BarrierStmt>(&s.node)) ++n;
  });
  return n;
}

int count_partial(const StmtBlock& body, int id, int count) {
  int n = 0;
  for_each_stmt(body, [&](const Stmt& s) {
    if (const auto* pb = std::get_if<PartialBarrierStmt>(&s.node))
      if (pb->id == id && pb->count == count) ++n;
  });
  return n;
}

size_t count_stmts(const StmtBlock& body) {
  size_t n = 0;
  for_each_stmt(body, [&](const Stmt&) { ++n; });
  return n;
}

int substring_count(const std::string& text, const std::string& needle) {
  int n = 0;
  for (size_t at = text.find(needle); at != std::string::npos;
       at = text.find(needle, at + 1))
    ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// build_prologue
// ---------------------------------------------------------------------------

TEST(Prologue, MotivatingDims) {
  RemapDump d = run_prologue(Dim3{56, 16, 1}, Dim3{128, 1, 1}, 896);
  for (int tid = 0; tid < 1024; ++tid) {
    if (tid < 896) {
      EXPECT_EQ(d.bx[size_t(tid)], 56);
      EXPECT_EQ(d.by[size_t(tid)], 16);
      EXPECT_EQ(d.bz[size_t(tid)], 1);
      EXPECT_EQ(d.tx[size_t(tid)], tid % 56);
      EXPECT_EQ(d.ty[size_t(tid)], (tid / 56) % 16);
      EXPECT_EQ(d.tz[size_t(tid)], tid / 896);
    } else {
      EXPECT_EQ(d.bx[size_t(tid)], 128);
      EXPECT_EQ(d.by[size_t(tid)], 1);
      EXPECT_EQ(d.tx[size_t(tid)], (tid - 896) % 128);
      EXPECT_EQ(d.ty[size_t(tid)], 0);
      EXPECT_EQ(d.tz[size_t(tid)], 0);
    }
  }
}

TEST(Prologue, OneDimensionalRanges) {
  RemapDump d = run_prologue(Dim3{32, 1, 1}, Dim3{32, 1, 1}, 32);
  for (int tid = 0; tid < 64; ++tid) {
    int expect = tid < 32 ? tid : tid - 32;
    EXPECT_EQ(d.tx[size_t(tid)], expect);
    EXPECT_EQ(d.ty[size_t(tid)], 0);
    EXPECT_EQ(d.tz[size_t(tid)], 0);
  }
}

TEST(Prologue, RowMajorInverseBruteForce) {
  // oracle: enumerate all 64 ids against the row-major inverse
  Dim3 dims1{8, 4, 2};
  RemapDump d = run_prologue(dims1, Dim3{32, 1, 1}, 64);
  for (int tid = 0; tid < 64; ++tid) {
    EXPECT_EQ(d.tx[size_t(tid)], tid % 8);
    EXPECT_EQ(d.ty[size_t(tid)], (tid / 8) % 4);
    EXPECT_EQ(d.tz[size_t(tid)], tid / 32);
  }
  EXPECT_EQ(d.tx[63], 7);
  EXPECT_EQ(d.ty[63], 3);
  EXPECT_EQ(d.tz[63], 1);
}

TEST(Prologue, DimensionMismatchRejected) {
  try {
    build_prologue(Dim3{56, 16, 1}, Dim3{128, 1, 1}, 512);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::DimensionMismatch);
  }
}

// ---------------------------------------------------------------------------
// rewrite_builtins / replace_barriers
// ---------------------------------------------------------------------------

TEST(RewriteBuiltins, RemapsThreadAndBlockDims) {
  Program p = parse_program(
      "kernel k(int a[]) dims (64,2,1) {"
      " int i = threadIdx.x + threadIdx.y * blockDim.x;"
      " a[i] = i; }");
  StmtBlock rewritten = rewrite_builtins(p.kernels[0].body, 1);
  const auto& decl = std::get<DeclStmt>(rewritten.stmts[0].node);
  EXPECT_EQ(emit_expr(*decl.init), "threadIdx_x + threadIdx_y * blockDim_x");
}

TEST(RewriteBuiltins, NoBuiltinsUnchanged) {
  Program p = parse_program("kernel k(int a[]) dims (32,1,1) { a[0] = a[1] + 2; }");
  StmtBlock rewritten = rewrite_builtins(p.kernels[0].body, 2);
  EXPECT_TRUE(ast_equal(p.kernels[0].body, rewritten));
}

TEST(RewriteBuiltins, HistogramFullyRewritten) {
  Kernel hist = load_normalized("histogram", "k2_");
  int before = count_builtin_remap_targets(hist.body);
  EXPECT_EQ(before, 6);  // three threadIdx.x and three blockDim.x uses
  StmtBlock rewritten = rewrite_builtins(hist.body, 2);
  EXPECT_EQ(count_builtin_remap_targets(rewritten), 0);
}

TEST(RewriteBuiltins, GridBuiltinsLeftAlone) {
  Kernel vadd = load_normalized("vector_add", "k1_");
  StmtBlock rewritten = rewrite_builtins(vadd.body, 1);
  int grid_refs = 0;
  for_each_stmt(rewritten, [&](const Stmt& s) {
    for_each_expr_shallow(s, [&](const Expr& e) {
      for_each_subexpr(e, [&](const Expr& sub) {
        if (const auto* ref = std::get_if<BuiltinRef>(&sub.node))
          if (ref->builtin == BuiltinVar::BlockIdxX || ref->builtin == BuiltinVar::GridDimX)
            ++grid_refs;
      });
    });
  });
  EXPECT_EQ(grid_refs, 2);
}

TEST(ReplaceBarriers, HistogramGetsPartialBarriers) {
  Kernel hist = load_normalized("histogram", "k2_");
  size_t nodes_before = count_stmts(hist.body);
  EXPECT_EQ(count_barriers(hist.body), 2);
  StmtBlock replaced = replace_barriers(hist.body, 2, 128);
  EXPECT_EQ(count_partial(replaced, 2, 128), 2);
  EXPECT_EQ(count_barriers(replaced), 0);
  EXPECT_EQ(count_stmts(replaced), nodes_before);
}

TEST(ReplaceBarriers, NoBarriersUnchanged) {
  Kernel vadd = load_normalized("vector_add", "k1_");
  StmtBlock replaced = replace_barriers(vadd.body, 1, 128);
  EXPECT_TRUE(ast_equal(vadd.body, replaced));
}

TEST(ReplaceBarriers, RejectsBadArguments) {
  Kernel hist = load_normalized("histogram", "k2_");
  try {
    replace_barriers(hist.body, 2, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::MisalignedCount);
  }
  try {
    replace_barriers(hist.body, 16, 128);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::BadBarrierId);
  }
}

// ---------------------------------------------------------------------------
// generate_fused
// ---------------------------------------------------------------------------

TEST(GenerateFused, MotivatingStructure) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  FusedKernel fused = generate_fused(bn, hist, 896, 128, sm());

  ASSERT_EQ(fused.barriers.entries.size(), 2u);
  EXPECT_EQ(fused.barriers.entries[0].barrier_id, 1);
  EXPECT_EQ(fused.barriers.entries[0].participant_count, 896);
  EXPECT_EQ(fused.barriers.entries[0].owner, 1);
  EXPECT_EQ(fused.barriers.entries[1].barrier_id, 2);
  EXPECT_EQ(fused.barriers.entries[1].participant_count, 128);
  EXPECT_EQ(fused.barriers.entries[1].owner, 2);

  // barrier preservation per constituent
  EXPECT_EQ(count_partial(fused.body1, 1, 896), count_barriers(bn.body));
  EXPECT_EQ(count_partial(fused.body2, 2, 128), count_barriers(hist.body));

  // guards: global_tid < 896 and global_tid >= 896
  const auto& g1 = std::get<BinaryExpr>(fused.guard1.node);
  EXPECT_EQ(g1.op, BinaryOp::Lt);
  EXPECT_EQ(std::get<IntLit>(g1.rhs->node).value, 896);
  const auto& g2 = std::get<BinaryExpr>(fused.guard2.node);
  EXPECT_EQ(g2.op, BinaryOp::Ge);
  EXPECT_EQ(std::get<IntLit>(g2.rhs->node).value, 896);
  // disjoint and exhaustive over [0, d0)
  for (int tid = 0; tid < fused.config.d0; ++tid)
    EXPECT_EQ((tid < 896) ^ (tid >= 896), 1);

  Kernel canonical = fused.to_kernel();
  EXPECT_TRUE(has_decl_prefix_form(canonical));
  Program check;
  check.kernels.push_back(canonical);
  EXPECT_NO_THROW(validate_program(check));
}

TEST(GenerateFused, EmptyKernelIsNeutral) {
  Kernel vadd = load_normalized("vector_add", "k1_");
  Kernel empty = load_normalized("empty", "k2_");
  FusedKernel fused = generate_fused(vadd, empty, 128, 32, sm());
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    MemoryImage mem = corpus_image("vector_add", seed);
    MemoryImage direct = run_functional(vadd, launch_for(vadd), mem);
    MemoryImage via_fused = run_functional(fused, launch_for(fused), mem);
    EXPECT_EQ(direct.digest(), via_fused.digest()) << seed;
  }
}

TEST(GenerateFused, DisjointVectorAddsMatchSequentialRuns) {
  // second copy of the kernel over its own arrays
  std::string src = read_file(mkfuse::testing::corpus_path("vector_add.mk"));
  for (size_t at = src.find("vadd_"); at != std::string::npos; at = src.find("vadd_", at))
    src.replace(at, 5, "vbdd_");
  Program alt = parse_program(src);

  Kernel k1 = load_normalized("vector_add", "k1_");
  Kernel k2 = normalize_kernel(alt.kernels[0], alt.functions, "k2_");
  FusedKernel fused = generate_fused(k1, k2, 64, 64, sm());

  for (uint64_t seed = 1; seed <= 20; ++seed) {
    MemoryImage mem = corpus_image("vector_add", seed);
    MemoryImage alt_mem;
    alt_mem.add_float_array("vbdd_a", 1024, 1000 + seed, -1, 1);
    alt_mem.add_float_array("vbdd_b", 1024, 2000 + seed, -1, 1);
    alt_mem.add_zero_array("vbdd_c", ScalarType::Float32, 1024);
    alt_mem.scalars["vbdd_n"] = MemScalar{ScalarType::Int32, 1024, 0.0f};
    mem.merge(alt_mem);

    LaunchConfig l1;
    l1.grid_dim = 1;
    l1.block_dims = fused.dims1;
    LaunchConfig l2;
    l2.grid_dim = 1;
    l2.block_dims = fused.dims2;
    MemoryImage sequential = run_functional(k2, l2, run_functional(k1, l1, mem));
    MemoryImage horizontal = run_functional(fused, launch_for(fused), mem);
    EXPECT_EQ(sequential.digest(), horizontal.digest()) << seed;
  }
}

TEST(GenerateFused, ErrorPaths) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");

  // grid mismatch names both grids
  Kernel hist_grid = hist;
  hist_grid.meta.grid_dim = 2;
  try {
    generate_fused(bn, hist_grid, 896, 128, sm());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::GridMismatch);
    EXPECT_NE(e.message().find("1"), std::string::npos);
    EXPECT_NE(e.message().find("2"), std::string::npos);
  }

  // warp misalignment
  EXPECT_THROW(generate_fused(bn, hist, 896, 100, sm()), Error);

  // thread budget
  try {
    generate_fused(bn, hist, 896, 512, sm());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::ThreadBudgetExceeded);
  }

  // shared memory overflow
  Program big = parse_program(
      "kernel big() dims (64,1,1) { shared int pool[30000]; pool[0] = 1; }");
  Kernel bigk = normalize_kernel(big.kernels[0], {}, "k2_");
  try {
    generate_fused(bn, bigk, 896, 64, sm());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::SharedMemoryOverflow);
  }

  // fixed kernels cannot be repartitioned
  Kernel hasher = load_normalized("hasher", "k2_");
  try {
    generate_fused(bn, hasher, 512, 256, sm());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrCode::DimensionMismatch);
  }
}

// ---------------------------------------------------------------------------
// emit_source
// ---------------------------------------------------------------------------

TEST(EmitSource, GotoStyleMatchesGolden) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  FusedKernel fused = generate_fused(bn, hist, 896, 128, sm());
  std::string text = emit_source(fused, EmitStyle::Goto);

  EXPECT_EQ(substring_count(text, "bar.sync 1, 896;"), 2);
  EXPECT_EQ(substring_count(text, "bar.sync 2, 128;"), 2);
  EXPECT_EQ(substring_count(text, "if (!(global_tid < 896)) goto K1_end;"), 1);
  EXPECT_EQ(substring_count(text, "if (global_tid < 896) goto K2_end;"), 1);

  std::string golden =
      read_file(std::string(MKFUSE_GOLDEN_DIR) + "/fused_batchnorm_histogram.cu");
  EXPECT_EQ(text, golden);
}

TEST(EmitSource, EmptyFusionIsPrologueOnly) {
  Kernel e1 = load_normalized("empty", "k1_");
  Kernel e2 = load_normalized("empty", "k2_");
  FusedKernel fused = generate_fused(e1, e2, 32, 32, sm());
  std::string text = emit_source(fused, EmitStyle::Goto);
  EXPECT_NE(text.find("global_tid"), std::string::npos);
  EXPECT_EQ(text.find("bar.sync"), std::string::npos);
}

TEST(EmitSource, StructuredReparsesAndSimulatesIdentically) {
  Kernel bn = load_normalized("batchnorm", "k1_");
  Kernel hist = load_normalized("histogram", "k2_");
  FusedKernel fused = generate_fused(bn, hist, 896, 128, sm());
  std::string text = emit_source(fused, EmitStyle::Structured);

  Program reparsed = parse_program(text);
  ASSERT_EQ(reparsed.kernels.size(), 1u);
  MemoryImage mem = pair_image("batchnorm", "histogram");
  MemoryImage direct = run_functional(fused, launch_for(fused), mem);
  MemoryImage via_text =
      run_functional(reparsed.kernels[0], launch_for(reparsed.kernels[0]), mem);
  EXPECT_EQ(direct.digest(), via_text.digest());
}

TEST(GenerateFused, FloatAtomicsEquivalentWithinTolerance) {
  // Timed execution interleaves the two kernels' warps by latency, so float
  // atomic_add order differs from the sequential baseline; values must
  // agree within 1e-5 relative. Integer data stays bit-exact.
  const char* src_a =
      "kernel facc(float fa_out[], float fa_in[], int fa_flag[]) dims (64,1,1) {"
      " for (int i = threadIdx.x; i < 256; i = i + blockDim.x) {"
      "   atomic_add(fa_out[i % 4], fa_in[i]); }"
      " fa_flag[threadIdx.x] = threadIdx.x; }";
  const char* src_b =
      "kernel fbcc(float fb_out[], float fb_in[]) dims (64,1,1) {"
      " for (int i = threadIdx.x; i < 256; i = i + blockDim.x) {"
      "   atomic_add(fb_out[i % 4], fb_in[i] * 0.5); } }";
  Program pa = parse_program(src_a);
  Program pb = parse_program(src_b);
  Kernel k1 = normalize_kernel(pa.kernels[0], {}, "k1_");
  Kernel k2 = normalize_kernel(pb.kernels[0], {}, "k2_");
  FusedKernel fused = generate_fused(k1, k2, 64, 64, sm());

  MemoryImage mem;
  mem.add_float_array("fa_in", 256, 31, -1, 1);
  mem.add_zero_array("fa_out", ScalarType::Float32, 4);
  mem.add_zero_array("fa_flag", ScalarType::Int32, 64);
  mem.add_float_array("fb_in", 256, 32, -1, 1);
  mem.add_zero_array("fb_out", ScalarType::Float32, 4);

  MemoryImage sequential =
      run_functional(k2, launch_for(k2), run_functional(k1, launch_for(k1), mem));
  MemoryImage timed_fused = run_timed(fused, launch_for(fused), sm(), mem).first;

  for (const char* name : {"fa_out", "fb_out"}) {
    const auto& expect = sequential.arrays.at(name).floats;
    const auto& got = timed_fused.arrays.at(name).floats;
    for (size_t i = 0; i < expect.size(); ++i) {
      double tolerance = 1e-5 * std::max(1.0, std::abs(double(expect[i])));
      EXPECT_NEAR(got[i], expect[i], tolerance) << name << "[" << i << "]";
    }
  }
  EXPECT_EQ(sequential.arrays.at("fa_flag").ints, timed_fused.arrays.at("fa_flag").ints);
}

TEST(EmitSource, RecordedRegCapRoundTrips) {
  Kernel s = load_normalized("streamer", "k1_");
  Kernel h = load_normalized("hasher", "k2_");
  FusedKernel fused = generate_fused(s, h, 512, 512, sm());
  fused.config.reg_cap = 32;
  std::string text = emit_source(fused, EmitStyle::Structured);
  EXPECT_NE(text.find("//@ regcap=32"), std::string::npos);
  Program reparsed = parse_program(text);
  EXPECT_EQ(reparsed.kernels[0].meta.regcap, 32);
  EXPECT_EQ(launch_for(reparsed.kernels[0]).reg_cap, 32);
}
