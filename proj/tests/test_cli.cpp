#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

#ifndef MKFUSE_BIN
#define MKFUSE_BIN "mkfuse"
#endif

namespace fs = std::filesystem;
using mkfuse::testing::corpus_path;
using mkfuse::testing::read_file;

namespace {

struct RunResult {
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
};

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "mkfuse_cli_tests";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

RunResult run_cli(const std::string& args) {
  fs::path out = work_dir() / "stdout.txt";
  fs::path err = work_dir() / "stderr.txt";
  std::string cmd = std::string(MKFUSE_BIN) + " " + args + " > " + out.string() + " 2> " +
                    err.string();
  int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.stdout_text = read_file(out.string());
  result.stderr_text = read_file(err.string());
  return result;
}

std::string img(const std::string& stem) {
  return " --mem " + corpus_path("images/" + stem + ".img");
}

}  // namespace

TEST(Cli, FuseWritesGotoSourceWithBarriers) {
  fs::path out = work_dir() / "bn_hist.cu";
  RunResult r = run_cli("fuse " + corpus_path("batchnorm.mk") + " " +
                        corpus_path("histogram.mk") + " --d1 896 --d2 128 --style goto -o " +
                        out.string());
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  std::string text = read_file(out.string());
  EXPECT_NE(text.find("bar.sync 1, 896;"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("barrier id 1: count 896"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("barrier id 2: count 128"), std::string::npos);
}

TEST(Cli, SelfFusionOfEmptyKernelSucceeds) {
  fs::path out = work_dir() / "empty2.cu";
  RunResult r = run_cli("fuse " + corpus_path("empty.mk") + " " + corpus_path("empty.mk") +
                        " --d1 32 --d2 32 --style goto -o " + out.string());
  EXPECT_EQ(r.exit_code, 0) << r.stderr_text;
  std::string text = read_file(out.string());
  EXPECT_NE(text.find("global_tid"), std::string::npos);
  EXPECT_EQ(text.find("bar.sync"), std::string::npos);
}

TEST(Cli, MismatchedGridsFailWithBothDims) {
  fs::path other = work_dir() / "ssum_grid2.mk";
  std::ofstream(other.string()) << "//@ grid=2\n" << read_file(corpus_path("strided_sum.mk"));
  RunResult r = run_cli("fuse " + corpus_path("vector_add.mk") + " " + other.string() +
                        " --d1 128 --d2 128 -o " + (work_dir() / "never.cu").string());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.stderr_text.find("GridMismatch"), std::string::npos);
  EXPECT_NE(r.stderr_text.find("1"), std::string::npos);
  EXPECT_NE(r.stderr_text.find("2"), std::string::npos);
}

TEST(Cli, SimulateIsDeterministic) {
  std::string args = "simulate " + corpus_path("vector_add.mk") + img("vector_add");
  RunResult a = run_cli(args);
  RunResult b = run_cli(args);
  ASSERT_EQ(a.exit_code, 0) << a.stderr_text;
  EXPECT_EQ(a.stdout_text, b.stdout_text);
  EXPECT_NE(a.stdout_text.find("digest = "), std::string::npos);
}

TEST(Cli, MemBoundKernelReportsMemStalls) {
  RunResult r = run_cli("simulate " + corpus_path("streamer.mk") + img("streamer"));
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  std::istringstream in(r.stdout_text);
  std::string line;
  double stall = -1;
  while (std::getline(in, line)) {
    if (line.rfind("meminst_stall_fraction = ", 0) == 0)
      stall = std::stod(line.substr(line.find('=') + 1));
  }
  EXPECT_GT(stall, 0.9);
}

TEST(Cli, FusedDigestEqualsSequentialDigest) {
  fs::path fused = work_dir() / "vadd_ssum.mk";
  RunResult f = run_cli("fuse " + corpus_path("vector_add.mk") + " " +
                        corpus_path("strided_sum.mk") +
                        " --d1 128 --d2 128 --style structured --regcap off -o " +
                        fused.string());
  ASSERT_EQ(f.exit_code, 0) << f.stderr_text;

  RunResult fused_run =
      run_cli("simulate " + fused.string() + img("vector_add") + img("strided_sum"));
  RunResult seq_run = run_cli("simulate --sequential " + corpus_path("vector_add.mk") + " " +
                              corpus_path("strided_sum.mk") + img("vector_add") +
                              img("strided_sum"));
  ASSERT_EQ(fused_run.exit_code, 0) << fused_run.stderr_text;
  ASSERT_EQ(seq_run.exit_code, 0) << seq_run.stderr_text;
  auto digest_of = [](const std::string& text) {
    auto at = text.find("digest = ");
    return text.substr(at, 25);
  };
  EXPECT_EQ(digest_of(fused_run.stdout_text), digest_of(seq_run.stdout_text));
}

TEST(Cli, SearchWritesTraceRows) {
  fs::path csv = work_dir() / "trace.csv";
  RunResult r = run_cli("search " + corpus_path("vector_add.mk") + " " +
                        corpus_path("strided_sum.mk") + " --d0 256" + img("vector_add") +
                        img("strided_sum") + " --trace " + csv.string());
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  std::istringstream in(read_file(csv.string()));
  std::string line;
  int rows = -1;  // discount header
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(Cli, SearchFixedPairSplitsEvenly) {
  RunResult r = run_cli("search " + corpus_path("streamer.mk") + " " +
                        corpus_path("hasher.mk") + img("streamer") + img("hasher"));
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_NE(r.stdout_text.find("evaluated = 2"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("best_d1 = 512"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("best_d2 = 512"), std::string::npos);
}

TEST(Cli, OccupancyWorkedExample) {
  RunResult r = run_cli("occupancy --regs 64 --shmem 24576 --threads 512");
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_NE(r.stdout_text.find("blocks_per_sm = 2"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("limiting_resource = registers"), std::string::npos);
}

TEST(Cli, CheckReportsLint) {
  fs::path bad = work_dir() / "lint_case.mk";
  std::ofstream(bad.string()) << "kernel k(int a[]) dims (32,1,1) {\n"
                                 "  goto skip;\n"
                                 "  int x = 1;\n"
                                 "skip:\n"
                                 "  a[0] = 2;\n"
                                 "}\n";
  RunResult r = run_cli("check " + bad.string());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.stdout_text.find("ok: 1 kernel(s)"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("jumps over a declaration"), std::string::npos);
}

TEST(Cli, ErrorsCarryPositions) {
  fs::path bad = work_dir() / "syntax_error.mk";
  std::ofstream(bad.string()) << "kernel k() dims (32,1,1) {\n  frob 1;\n}\n";
  RunResult r = run_cli("check " + bad.string());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.stderr_text.find("[Syntax] 2:"), std::string::npos);
}

TEST(Cli, EntrySelectsAKernelWithinTheFile) {
  fs::path multi = work_dir() / "multi.mk";
  std::ofstream(multi.string()) << "kernel first(int a[]) dims (32,1,1) { a[0] = 1; }\n"
                                   "kernel second(int a[]) dims (64,1,1) { a[0] = 2; }\n";
  RunResult r = run_cli("occupancy " + multi.string() + " --entry second");
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_NE(r.stdout_text.find("kernel = second"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("threads_per_block = 64"), std::string::npos);

  RunResult missing = run_cli("occupancy " + multi.string() + " --entry nope");
  EXPECT_NE(missing.exit_code, 0);
}

TEST(Cli, RecordedRegCapFlowsIntoSimulate) {
  fs::path fused = work_dir() / "capped.mk";
  RunResult f = run_cli("fuse " + corpus_path("streamer.mk") + " " +
                        corpus_path("hasher.mk") +
                        " --d1 512 --d2 512 --style structured --regcap auto -o " +
                        fused.string());
  ASSERT_EQ(f.exit_code, 0) << f.stderr_text;
  EXPECT_NE(read_file(fused.string()).find("//@ regcap="), std::string::npos);

  RunResult capped = run_cli("simulate " + fused.string() + img("streamer") + img("hasher"));
  RunResult uncapped = run_cli("simulate " + fused.string() + img("streamer") +
                               img("hasher") + " --regcap off");
  ASSERT_EQ(capped.exit_code, 0) << capped.stderr_text;
  // the recorded cap spills; disabling it does not
  EXPECT_EQ(capped.stdout_text.find("spill_loads_stores = 0"), std::string::npos);
  EXPECT_NE(uncapped.stdout_text.find("spill_loads_stores = 0"), std::string::npos);
}
