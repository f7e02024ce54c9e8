#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "fade/tensor_io.hpp"
#include "fade/upsample.hpp"

#ifndef FADE_CLI_PATH
#error "FADE_CLI_PATH must point at the fade executable"
#endif

using namespace fade;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fade_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  RunResult run(const std::string& args, const std::string& env = "") const {
    const std::string log = path("log.txt");
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" FADE_CLI_PATH "\" " + args + " > \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = slurp(log);
    return r;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, VerifyPassesForSeveralSeeds) {
  for (const char* seed : {"42", "7", "9"}) {
    const auto r = run(std::string("verify --seed ") + seed);
    EXPECT_EQ(r.code, 0) << r.output;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(r.output, m, std::regex(R"((\d+)/(\d+) invariants passed)")));
    EXPECT_EQ(m[1], m[2]);
    EXPECT_GE(std::stoi(m[2]), 25);
  }
}

TEST_F(CliTest, VerifyCsvIsDeterministic) {
  ASSERT_EQ(run("verify --out " + path("a.csv")).code, 0);
  ASSERT_EQ(run("verify --out " + path("b.csv")).code, 0);
  const auto a = slurp(path("a.csv"));
  EXPECT_EQ(a, slurp(path("b.csv")));
  EXPECT_EQ(a.rfind("module,invariant,status\n", 0), 0u);
}

TEST_F(CliTest, FaultInjectionFailsVerify) {
  const auto flag = run("--fault-inject verify");
  EXPECT_EQ(flag.code, 1);
  EXPECT_NE(flag.output.find("[FAIL] tensor_core/softmax_preserves_logit_order"), std::string::npos) << flag.output;
  const auto env = run("verify", "FADE_FAULT_INJECT=1");
  EXPECT_EQ(env.code, 1);
  EXPECT_NE(env.output.find("[FAIL]"), std::string::npos);
  // The hidden flag stays out of the help text.
  EXPECT_EQ(run("--help").output.find("fault"), std::string::npos);
}

TEST_F(CliTest, GradcheckSingleTrial) {
  const auto r = run("gradcheck --trials 1 --out " + path("g.csv"));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("worst relative error"), std::string::npos);
  EXPECT_EQ(lines(slurp(path("g.csv"))), 12u);
  const auto bad = run("--fault-inject gradcheck --trials 1 --op softmax_channels");
  EXPECT_EQ(bad.code, 1) << bad.output;
  EXPECT_EQ(run("gradcheck --op maxpool").code, 2);
  EXPECT_EQ(run("gradcheck --trials 0").code, 2);
}

TEST_F(CliTest, BenchGridRowCounts) {
  const std::pair<const char*, std::size_t> grids[] = {{"fig9a", 25}, {"fig9b", 20}, {"fig9c", 20}};
  for (const auto& [grid, rows] : grids) {
    const std::string out = path(std::string(grid) + ".csv");
    const auto r = run(std::string("bench --no-timing --grid ") + grid + " --out " + out);
    ASSERT_EQ(r.code, 0) << r.output;
    const auto csv = slurp(out);
    EXPECT_EQ(lines(csv), rows + 1) << grid;
    EXPECT_EQ(csv.rfind("kind,C,H,W,K,h,d,macs,flops,peak_bytes,wall_ns_median\n", 0), 0u);
    ASSERT_EQ(run(std::string("bench --no-timing --grid ") + grid + " --out " + out + ".2").code, 0);
    EXPECT_EQ(csv, slurp(out + ".2"));
  }
}

TEST_F(CliTest, BenchCustomTimedAndErrors) {
  const auto r = run("bench --grid custom --kind bilinear --kind fade_full --C 4 --H 6 --W 6 --d 8 --trials 3 --out " +
                     path("c.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(path("c.csv"));
  EXPECT_EQ(lines(csv), 3u);
  EXPECT_NE(csv.find("\nfade_full,4,6,6,5,3,8,"), std::string::npos) << csv;
  EXPECT_EQ(run("bench --grid fig9z --no-timing").code, 2);
  EXPECT_EQ(run("bench --grid custom --kind indexnet --no-timing").code, 2);
  EXPECT_EQ(run("bench --grid custom --kind bilinear --C 4 --H 4 --W 4 --trials 2").code, 2);
}

TEST_F(CliTest, ToySingleKind) {
  const auto r = run("toy --kind fade_full --epochs 3");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("fade_full"), std::string::npos);
  EXPECT_EQ(run("toy --kind indexnet").code, 2);
  EXPECT_EQ(run("toy").code, 2);
  EXPECT_EQ(run("toy --ablation --kind carafe").code, 2);
  EXPECT_EQ(run("toy --ablation --epochs 10").code, 2);
  EXPECT_EQ(run("toy --kind carafe --lr 0").code, 2);
}

TEST_F(CliTest, ToyAblationCsvRepeatable) {
  ASSERT_EQ(run("toy --ablation --epochs 50 --out " + path("a.csv")).code, 0);
  ASSERT_EQ(run("toy --ablation --epochs 50 --out " + path("b.csv")).code, 0);
  const auto a = slurp(path("a.csv"));
  EXPECT_EQ(a, slurp(path("b.csv")));
  EXPECT_EQ(lines(a), 7u);
  EXPECT_EQ(a.rfind("kind,final_train_mse,final_test_mse,epochs,lr,seed\n", 0), 0u);
  for (const char* k : {"bilinear", "carafe", "encoder_only", "fade_no_gate", "fade_skip", "fade_full"})
    EXPECT_NE(a.find(std::string("\n") + k + ","), std::string::npos) << k;
}

TEST_F(CliTest, UpsampleRandomParams) {
  SplitMix64 rng(3);
  const auto enc = random_tensor<float>({1, 4, 8, 8}, rng), dec = random_tensor<float>({1, 4, 4, 4}, rng);
  write_tensor(path("enc.ften"), enc);
  write_tensor(path("dec.ften"), dec);
  const std::string io = "--enc " + path("enc.ften") + " --dec " + path("dec.ften");

  auto r = run("upsample " + io + " --params random:1 --out " + path("y.ften"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto y = read_tensor<float>(path("y.ften"));
  EXPECT_EQ(y.shape(), (Shape4{1, 4, 8, 8}));

  // mode none is the reassembled decoder with the same seeded parameters.
  r = run("upsample " + io + " --params random:1 --mode none --out " + path("none.ften"));
  ASSERT_EQ(r.code, 0) << r.output;
  SplitMix64 prng(1);
  const auto fp = FadeParams<float>::init(4, prng, FusionMode::None, 3, 5, 64);
  const auto pre_up = reassemble(dec, gen_kernels_semishift(enc, dec, fp.kernel_gen));
  EXPECT_EQ(read_tensor<float>(path("none.ften")), pre_up);
  EXPECT_NE(read_tensor<float>(path("none.ften")), y);

  // Saved parameters reload to the same output.
  ASSERT_EQ(run("upsample " + io + " --params random:1 --save-params " + path("p.json") + " --out " + path("y1.ften")).code, 0);
  ASSERT_EQ(run("upsample " + io + " --params " + path("p.json") + " --out " + path("y2.ften")).code, 0);
  EXPECT_EQ(slurp(path("y1.ften")), slurp(path("y2.ften")));
  EXPECT_EQ(slurp(path("y1.ften")), slurp(path("y.ften")));

  ASSERT_EQ(run("upsample " + io + " --params random:1 --dtype f64 --out " + path("y64.ften")).code, 0);
  const auto y64 = read_tensor_any(path("y64.ften"));
  ASSERT_TRUE(std::holds_alternative<Tensor4<double>>(y64));
  EXPECT_LE(max_abs_diff(std::get<Tensor4<double>>(y64).cast<float>(), y), 1e-5f);
}

TEST_F(CliTest, UpsampleInputErrors) {
  SplitMix64 rng(4);
  write_tensor(path("enc.ften"), random_tensor<float>({1, 4, 8, 6}, rng));
  write_tensor(path("dec.ften"), random_tensor<float>({1, 4, 4, 4}, rng));
  auto r = run("upsample --enc " + path("enc.ften") + " --dec " + path("dec.ften") + " --out " + path("y.ften"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("ShapeMismatch"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(path("y.ften")));

  std::ofstream(path("junk.ften")) << "not a tensor file at all, definitely longer than thirty-two bytes";
  r = run("upsample --enc " + path("junk.ften") + " --dec " + path("dec.ften") + " --out " + path("y.ften"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("BadMagic"), std::string::npos) << r.output;

  EXPECT_EQ(run("upsample --enc " + path("missing.ften") + " --dec " + path("dec.ften") + " --out " + path("y.ften")).code, 2);
  EXPECT_EQ(run("upsample --dec " + path("dec.ften") + " --out " + path("y.ften")).code, 2);
  EXPECT_EQ(run("upsample --enc " + path("enc.ften") + " --dec " + path("dec.ften") + " --mode blend --out " +
                path("y.ften"))
                .code,
            2);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("verify --seed notanumber").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}
