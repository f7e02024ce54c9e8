// Acceptance suite: one [PASS]/[FAIL] line per criterion, exit 0 iff all pass.
// Usage: acceptance_test [--cli PATH] [--workdir DIR]

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fade/experiments.hpp"
#include "fade/gradcheck.hpp"
#include "fade/kernel_gen.hpp"
#include "fade/profiler.hpp"
#include "fade/upsample.hpp"

using namespace fade;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Per-position channel sums within tol, every weight in [0, 1].
template <Real T>
bool normalized(const KernelMap<T>& k, double tol, double* worst) {
  if (!k.normalized) return false;
  const auto& t = k.tensor;
  const std::size_t plane = t.h() * t.w();
  bool ok = true;
  for (std::size_t b = 0; b < t.n(); ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      double s = 0;
      for (std::size_t m = 0; m < t.c(); ++m) {
        const double v = t.plane(b, m)[p];
        ok = ok && v >= 0.0 && v <= 1.0;
        s += v;
      }
      *worst = std::max(*worst, std::abs(s - 1.0));
      ok = ok && std::abs(s - 1.0) <= tol;
    }
  return ok;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  SplitMix64 rng(1001);
  const std::size_t channels[3] = {3, 8, 16};
  float worst = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = channels[t % 3], H = 3 + rng.below(6), W = 3 + rng.below(6);
    const auto p = KernelGenParams<float>::init(C, rng);
    const auto enc = random_tensor<float>({1, C, 2 * H, 2 * W}, rng), dec = random_tensor<float>({1, C, H, W}, rng);
    worst = std::max(worst, max_abs_diff(gen_kernels_semishift(enc, dec, p).tensor, gen_kernels_oracle(enc, dec, p).tensor));
  }
  return {worst <= 1e-5f, "20 trials, C in {3,8,16}, H,W in 3..8; max abs diff " + fmt("%.2e", worst)};
}

Outcome criterion2() {
  SplitMix64 rng(1002);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t C = 1 + rng.below(16);
    const auto p = KernelGenParams<double>::random(C, rng, 3, 5, 1 + rng.below(64));
    const auto we = random_tensor<double>({1, C, 3, 3}, rng), wd = random_tensor<double>({1, C, 3, 3}, rng);
    const auto cat = window_logits_concat(concat_channels(we, wd), stack_compressors(p), p.beta);
    const auto split = window_logits_split(we, wd, p);
    for (std::size_t m = 0; m < cat.size(); ++m) worst = std::max(worst, std::abs(cat[m] - split[m]));
  }
  return {worst <= 1e-10, "50 f64 windows; max abs diff " + fmt("%.2e", worst)};
}

Outcome criterion3() {
  SplitMix64 rng(1003);
  double worst = 0;
  bool ok = true;
  std::size_t maps = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = 1 + rng.below(16), H = 2 + rng.below(7), W = 2 + rng.below(7), n = 1 + rng.below(2);
    const double scale = 0.5 + 2.5 * rng.uniform();
    const auto p = KernelGenParams<float>::random(C, rng, 3, 5, 8, scale);
    const auto enc = random_tensor<float>({n, C, 2 * H, 2 * W}, rng, -2, 2);
    const auto dec = random_tensor<float>({n, C, H, W}, rng, -2, 2);
    const auto carafe = SingleSourceKernelParams<float>::carafe(C, rng, 5, 8);
    const auto enc_only = SingleSourceKernelParams<float>::encoder_only(C, rng, 5, 8);
    for (const auto& k : {gen_kernels_naive(enc, dec, p), gen_kernels_semishift(enc, dec, p), gen_kernels_oracle(enc, dec, p),
                          carafe_kernels(dec, carafe), encoder_only_kernels(enc, enc_only)}) {
      ok = normalized(k, 1e-5, &worst) && ok;
      ++maps;
    }
  }
  return {ok, std::to_string(maps) + " maps from 5 generators; worst |sum - 1| " + fmt("%.2e", worst)};
}

Outcome criterion4() {
  SplitMix64 rng(1004);
  std::size_t interior_groups = 0, interior_bad = 0, border_groups = 0, border_bad = 0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t C = 1 + rng.below(8), H = 3 + rng.below(6), W = 3 + rng.below(6);
    const auto p = KernelGenParams<float>::init(C, rng);
    const Tensor4<float> enc(1, C, 2 * H, 2 * W, static_cast<float>(rng.uniform(-1, 1)));
    const auto dec = random_tensor<float>({1, C, H, W}, rng);
    const auto k = gen_kernels_semishift(enc, dec, p).tensor;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        bool same = true;
        for (std::size_t m = 0; m < k.c(); ++m) {
          const float v = k(0, m, 2 * i, 2 * j);
          same = same && k(0, m, 2 * i, 2 * j + 1) == v && k(0, m, 2 * i + 1, 2 * j) == v && k(0, m, 2 * i + 1, 2 * j + 1) == v;
        }
        const bool interior = i >= 1 && j >= 1 && i + 1 < H && j + 1 < W;
        (interior ? interior_groups : border_groups) += 1;
        if (!same) (interior ? interior_bad : border_bad) += 1;
      }
  }
  return {interior_bad == 0 && interior_groups > 0,
          std::to_string(interior_groups - interior_bad) + "/" + std::to_string(interior_groups) +
              " interior 2x2 groups bitwise equal (border groups, zero padded, excluded: " +
              std::to_string(border_bad) + "/" + std::to_string(border_groups) + " differ)"};
}

Outcome criterion5() {
  SplitMix64 rng(1005);
  bool ok = true;
  std::vector<std::string> failed;
  auto check = [&](bool cond, const char* what) {
    if (!cond) failed.emplace_back(what);
    ok = ok && cond;
  };
  for (int t = 0; t < 5; ++t) {
    const std::size_t n = 1 + rng.below(2), C = 1 + rng.below(4), H = 2 + rng.below(6), W = 2 + rng.below(6);
    const auto dec = random_tensor<float>({n, C, H, W}, rng);
    Tensor4<float> onehot(n, 25, 2 * H, 2 * W);
    for (std::size_t b = 0; b < n; ++b) std::fill_n(onehot.plane(b, 12), 4 * H * W, 1.0f);
    check(reassemble(dec, KernelMap<float>{onehot, true}) == nn_interpolate_x2(dec), "one-hot reassembly");

    const auto enc = random_tensor<float>({n, C, 2 * H, 2 * W}, rng), pre = random_tensor<float>({n, C, 2 * H, 2 * W}, rng);
    check(gated_blend(enc, pre, GateMap<float>{Tensor4<float>(n, 1, 2 * H, 2 * W, 0.0f)}) == pre, "G=0 blend");
    check(gated_blend(enc, pre, GateMap<float>{Tensor4<float>(n, 1, 2 * H, 2 * W, 1.0f)}) == enc, "G=1 blend");
    check(maxpool_x2(nn_interpolate_x2(dec)) == dec, "maxpool(nn_interpolate)");
  }
  return {ok, ok ? "one-hot reassembly, G=0/G=1 blends, maxpool(nn_interpolate) exact on 5 random instances"
                 : "failed: " + failed.front()};
}

Outcome criterion6() {
  constexpr std::uint64_t kFirstSeed = 42;
  double worst = 0;
  std::string where;
  for (OpId op : kAllOps)
    for (std::uint64_t s = kFirstSeed; s < kFirstSeed + 5; ++s) {
      const auto r = finite_diff_check(make_problem<double>(op, s));
      if (where.empty() || r.max_rel_err > worst) {
        worst = r.max_rel_err;
        where = std::string(op_name(op)) + " seed " + std::to_string(s);
      }
    }
  return {worst <= 1e-5, std::to_string(kAllOps.size()) + " ops x 5 seeds, f64; worst rel err " + fmt("%.2e", worst) +
                             " (" + where + ")"};
}

Outcome criterion7() {
  std::size_t points = 0;
  bool ordered = true, reproducible = true;
  for (const auto& name : grid_names()) {
    const auto grid = bench_grid(name);
    for (const auto& d : grid) {
      if (d.kind != OpKind::FadeNaive) continue;
      OpDesc s = d;
      s.kind = OpKind::FadeSemishift;
      const auto kn = count_kernel_gen_flops(d), ks = count_kernel_gen_flops(s);
      ordered = ordered && ks.flops < kn.flops && ks.peak_bytes < kn.peak_bytes;
      ++points;
    }
    reproducible = reproducible && bench_csv(bench_run(grid, 0, 42, false)) == bench_csv(bench_run(grid, 0, 42, false));
  }
  return {ordered && reproducible, std::to_string(points) + " grid points, semishift < naive on flops and peak bytes: " +
                                       (ordered ? "yes" : "NO") + "; CSV reproducible: " + (reproducible ? "yes" : "NO")};
}

Outcome criterion8() {
  const auto full = train_toy(ToyKind::FadeFull, 200, 0.05, 42);
  const auto carafe = train_toy(ToyKind::Carafe, 200, 0.05, 42);
  // Period-2 stripes in both orientations and phases.
  double bilinear_min = 1e9;
  for (bool vertical : {false, true})
    for (std::size_t phase : {0, 1}) {
      const auto data = make_toy_data(stripe_image(16, 2, vertical, phase));
      bilinear_min = std::min(bilinear_min, mse(bilinear_x2(data.dec), data.image()));
    }
  const bool ok = full.final_test_mse < 0.8 * carafe.final_test_mse && bilinear_min >= 0.2;
  return {ok, "fade_full " + fmt("%.4f", full.final_test_mse) + " vs 0.8 x carafe " +
                  fmt("%.4f", 0.8 * carafe.final_test_mse) + "; bilinear on period-2 stripes " + fmt("%.3f", bilinear_min)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion9(const std::string& cli, const fs::path& work) {
  struct Cmd {
    const char* name;
    const char* args;
  };
  const Cmd cmds[] = {{"verify", "verify --seed 42"}, {"gradcheck", "gradcheck --seed 42"}, {"toy", "toy --ablation --seed 42"}};
  std::string detail;
  bool ok = true;
  for (const auto& c : cmds) {
    std::string artifacts[2];
    int codes[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path out = work / (std::string(c.name) + "_" + std::to_string(run) + ".csv");
      codes[run] = run_cli(cli, std::string(c.args) + " --out \"" + out.string() + "\"", work / "log.txt");
      artifacts[run] = slurp(out);
    }
    const bool same = !artifacts[0].empty() && artifacts[0] == artifacts[1];
    const bool pass = codes[0] == 0 && codes[1] == 0 && same;
    ok = ok && pass;
    if (!detail.empty()) detail += ", ";
    detail += std::string(c.name) + (pass ? " ok" : " exit " + std::to_string(codes[0]) + "/" + std::to_string(codes[1]) +
                                                        (same ? "" : " artifacts differ"));
  }
  return {ok, detail + " (exit 0, byte-identical --out artifacts over two runs)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli =
#ifdef FADE_CLI_PATH
      FADE_CLI_PATH;
#else
      "fade";
#endif
  fs::path work = fs::temp_directory_path() / "fade_acceptance";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    if (key == "--cli")
      cli = argv[i + 1];
    else if (key == "--workdir")
      work = argv[i + 1];
  }
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* title;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "Oracle equivalence", 30, criterion1},
      {2, "Linearity identity", 5, criterion2},
      {3, "Kernel normalization", 0, criterion3},
      {4, "Variance control", 0, criterion4},
      {5, "Trivial identities", 0, criterion5},
      {6, "Gradient certification", 120, criterion6},
      {7, "Efficiency ordering", 60, criterion7},
      {8, "Toy detail reconstruction", 180, criterion8},
      {9, "End-to-end determinism", 0, [&] { return criterion9(cli, work); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1f s", secs);
    if (c.budget_s > 0) {
      timing += fmt(" of %.0f s", c.budget_s);
      if (secs >= c.budget_s) {
        o.pass = false;
        timing += " OVER BUDGET";
      }
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.title << ": " << o.detail << " [" << timing << "]"
              << std::endl;
  }
  fs::remove_all(work);
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
