// fade: command-line front end.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fade/experiments.hpp"
#include "fade/fault.hpp"
#include "fade/gradcheck.hpp"
#include "fade/profiler.hpp"
#include "fade/tensor_io.hpp"
#include "fade/upsample.hpp"
#include "fade/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsageError = 2;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FADE_CHECK(out.good(), fade::ErrorCode::IoError, "cannot open " + path + " for writing");
  out << content;
  FADE_CHECK(out.good(), fade::ErrorCode::IoError, "write failed: " + path);
}

std::string pad_right(std::string s, std::size_t n) {
  if (s.size() < n) s.append(n - s.size(), ' ');
  return s;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOpts {
  std::uint64_t seed = 42;
  std::string out;
};

int run_verify(const VerifyOpts& o) {
  const auto results = fade::run_invariants(o.seed);
  std::size_t passed = 0;
  std::ostringstream csv;
  csv << "module,invariant,status\n";
  for (const auto& r : results) {
    passed += r.passed;
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.module << '/' << r.name;
    if (!r.passed) std::cout << ": " << r.detail;
    std::cout << '\n';
    csv << r.module << ',' << r.name << ',' << (r.passed ? "pass" : "fail") << '\n';
  }
  std::cout << passed << '/' << results.size() << " invariants passed (seed " << o.seed << ")\n";
  if (!o.out.empty()) write_file(o.out, csv.str());
  return passed == results.size() ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::string grid = "fig9a";
  std::string out;
  std::size_t trials = 3;
  std::uint64_t seed = 42;
  bool no_timing = false;
  std::vector<std::string> kinds;
  std::size_t C = 64, H = 56, W = 56, K = 5, h = 3, d = 64;
};

int run_bench(const BenchOpts& o) {
  std::vector<fade::OpDesc> grid;
  if (o.grid == "custom") {
    const std::vector<std::string> kinds =
        o.kinds.empty() ? std::vector<std::string>{"bilinear", "carafe", "fade_naive", "fade_semishift", "fade_full"}
                        : o.kinds;
    for (const auto& k : kinds) grid.push_back({fade::kind_from_name(k), o.C, o.H, o.W, o.K, o.h, o.d});
  } else {
    grid = fade::bench_grid(o.grid);
  }
  const auto rows = fade::bench_run(grid, o.trials, o.seed, !o.no_timing);
  std::cout << pad_right("kind", 16) << pad_right("C", 6) << pad_right("HxW", 10) << pad_right("GFLOPs", 12)
            << pad_right("peak MiB", 12) << "median ms\n";
  for (const auto& r : rows) {
    char gf[32], mb[32], ms[32] = "-";
    std::snprintf(gf, sizeof gf, "%.4f", static_cast<double>(r.report.flops) * 1e-9);
    std::snprintf(mb, sizeof mb, "%.3f", static_cast<double>(r.report.peak_bytes) / (1024.0 * 1024.0));
    if (r.report.wall_ns) std::snprintf(ms, sizeof ms, "%.3f", *r.report.wall_ns * 1e-6);
    std::cout << pad_right(fade::kind_name(r.desc.kind), 16) << pad_right(std::to_string(r.desc.C), 6)
              << pad_right(std::to_string(r.desc.H) + "x" + std::to_string(r.desc.W), 10) << pad_right(gf, 12)
              << pad_right(mb, 12) << ms << '\n';
  }
  if (!o.out.empty()) write_file(o.out, fade::bench_csv(rows));
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOpts {
  std::uint64_t seed = 42;
  std::size_t trials = 5;
  std::vector<std::string> ops;
  double tol = 1e-5;
  std::string out;
};

int run_gradcheck(const GradcheckOpts& o) {
  FADE_CHECK(o.trials >= 1, fade::ErrorCode::InvalidArgument, "trials must be >= 1");
  std::vector<fade::OpId> ops;
  if (o.ops.empty())
    ops.assign(fade::kAllOps.begin(), fade::kAllOps.end());
  else
    for (const auto& name : o.ops) ops.push_back(fade::op_from_name(name));

  std::ostringstream csv;
  csv << "op,seed,max_rel_err,worst_leaf,worst_index\n";
  double worst = 0.0;
  bool ok = true;
  for (fade::OpId op : ops) {
    fade::FiniteDiffReport op_worst;
    std::uint64_t worst_seed = o.seed;
    for (std::size_t t = 0; t < o.trials; ++t) {
      const std::uint64_t seed = o.seed + t;
      const auto r = fade::finite_diff_check(fade::make_problem<double>(op, seed));
      char err[32];
      std::snprintf(err, sizeof err, "%.6e", r.max_rel_err);
      csv << fade::op_name(op) << ',' << seed << ',' << err << ',' << r.worst_leaf << ',' << r.worst_index << '\n';
      if (t == 0 || r.max_rel_err > op_worst.max_rel_err) {
        op_worst = r;
        worst_seed = seed;
      }
    }
    const bool pass = op_worst.max_rel_err <= o.tol;
    ok = ok && pass;
    worst = std::max(worst, op_worst.max_rel_err);
    char line[160];
    std::snprintf(line, sizeof line, "%.3e", op_worst.max_rel_err);
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << pad_right(fade::op_name(op), 24) << "max rel err " << line;
    if (!op_worst.worst_leaf.empty())
      std::cout << "  (" << op_worst.worst_leaf << '[' << op_worst.worst_index << "], seed " << worst_seed << ')';
    std::cout << '\n';
  }
  char w[32];
  std::snprintf(w, sizeof w, "%.3e", worst);
  std::cout << "worst relative error " << w << " over " << ops.size() << " ops x " << o.trials << " seeds (tolerance "
            << o.tol << ")\n";
  if (!o.out.empty()) write_file(o.out, csv.str());
  return ok ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------
// toy

struct ToyOpts {
  bool ablation = false;
  std::string kind;
  std::size_t epochs = 200;
  double lr = 0.05;
  std::uint64_t seed = 42;
  std::string out;
};

int run_toy(const ToyOpts& o) {
  std::vector<fade::TrainReport> reports;
  if (o.ablation) {
    reports = fade::ablation_suite(o.seed, o.epochs, o.lr);
  } else {
    FADE_CHECK(!o.kind.empty(), fade::ErrorCode::InvalidArgument, "pass --kind or --ablation");
    reports.push_back(fade::train_toy(o.kind, o.epochs, o.lr, o.seed));
  }
  std::cout << pad_right("kind", 16) << pad_right("train MSE", 14) << "test MSE\n";
  for (const auto& r : reports)
    std::cout << pad_right(fade::toy_kind_name(r.kind), 16) << pad_right(fade::format_real(r.final_train_mse), 14)
              << fade::format_real(r.final_test_mse) << '\n';
  if (!o.out.empty()) write_file(o.out, fade::ablation_csv(reports));
  return kOk;
}

// ---------------------------------------------------------------------------
// upsample

struct UpsampleOpts {
  std::string enc, dec, params = "random:42", mode = "gating", out, save_params;
  std::string dtype = "f32";
  std::size_t K = 5, h = 3, d = 64;
};

template <fade::Real T>
nlohmann::json params_to_json(fade::FadeParams<T> p) {
  nlohmann::json j;
  j["C"] = p.kernel_gen.channels();
  j["K"] = p.kernel_gen.K;
  j["h"] = p.kernel_gen.h;
  j["d"] = p.kernel_gen.d;
  auto put = [&](const char* name, std::span<T> s) { j[name] = std::vector<double>(s.begin(), s.end()); };
  p.for_each_array(put);
  return j;
}

template <fade::Real T>
fade::FadeParams<T> params_from_json(const nlohmann::json& j, fade::FusionMode mode) {
  auto p = fade::FadeParams<T>{fade::KernelGenParams<T>::zeros(j.at("C"), j.at("h"), j.at("K"), j.at("d")),
                               fade::GateParams<T>::zeros(j.at("C")), mode};
  p.for_each_array([&](const char* name, std::span<T> s) {
    const auto values = j.at(name).template get<std::vector<double>>();
    FADE_CHECK(values.size() == s.size(), fade::ErrorCode::ShapeMismatch,
               std::string("parameter ") + name + " has " + std::to_string(values.size()) + " values, expected " +
                   std::to_string(s.size()));
    std::copy(values.begin(), values.end(), s.begin());
  });
  p.validate();
  return p;
}

template <fade::Real T>
int upsample_as(const UpsampleOpts& o) {
  const auto enc = fade::read_tensor<T>(o.enc);
  const auto dec = fade::read_tensor<T>(o.dec);
  FADE_CHECK(enc.n() == dec.n() && enc.c() == dec.c() && enc.h() == 2 * dec.h() && enc.w() == 2 * dec.w(),
             fade::ErrorCode::ShapeMismatch,
             "encoder " + enc.shape().str() + " must be exactly twice the decoder " + dec.shape().str() + " spatially");
  const fade::FusionMode mode = fade::fusion_from_string(o.mode);
  fade::FadeParams<T> p;
  if (o.params.rfind("random:", 0) == 0) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(o.params.substr(7));
    } catch (const std::exception&) {
      throw fade::Error(fade::ErrorCode::InvalidArgument, "bad random seed in --params " + o.params);
    }
    fade::SplitMix64 rng(seed);
    p = fade::FadeParams<T>::init(dec.c(), rng, mode, o.h, o.K, o.d);
  } else {
    std::ifstream in(o.params);
    FADE_CHECK(in.good(), fade::ErrorCode::IoError, "cannot open " + o.params);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      p = params_from_json<T>(j, mode);
    } catch (const nlohmann::json::exception& e) {
      throw fade::Error(fade::ErrorCode::InvalidArgument, "bad parameter file " + o.params + ": " + e.what());
    }
  }
  const auto y = fade::fade_forward(enc, dec, p);
  fade::write_tensor(o.out, y);
  if (!o.save_params.empty()) write_file(o.save_params, params_to_json(p).dump(1) + "\n");
  std::cout << "wrote " << y.shape().str() << " (" << fade::to_string(mode) << ") to " << o.out << '\n';
  return kOk;
}

int run_upsample(const UpsampleOpts& o) {
  if (o.dtype == "f64") return upsample_as<double>(o);
  return upsample_as<float>(o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FADE feature upsampling: verification, benchmarks, gradient checks and toy experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  bool fault_inject = false;
  app.add_flag("--fault-inject", fault_inject)->group("");

  VerifyOpts vo;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_option("--seed", vo.seed, "Seed for random instances")->capture_default_str();
  verify->add_option("--out", vo.out, "Write per-invariant results as CSV");

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "Analytic cost model and wall-clock benchmark");
  bench->add_option("--grid", bo.grid, "fig9a | fig9b | fig9c | custom")
      ->check(CLI::IsMember({"fig9a", "fig9b", "fig9c", "custom"}))
      ->capture_default_str();
  bench->add_option("--out", bo.out, "CSV output path");
  bench->add_option("--trials", bo.trials, "Timed runs per row (>= 3)")->capture_default_str();
  bench->add_option("--seed", bo.seed, "Seed for inputs and parameters")->capture_default_str();
  bench->add_flag("--no-timing", bo.no_timing, "Skip wall-clock runs; leave wall_ns_median empty");
  bench->add_option("--kind", bo.kinds, "Operator kinds for --grid custom");
  bench->add_option("--C", bo.C, "Channels (custom grid)")->capture_default_str();
  bench->add_option("--H", bo.H, "Decoder height (custom grid)")->capture_default_str();
  bench->add_option("--W", bo.W, "Decoder width (custom grid)")->capture_default_str();
  bench->add_option("--K", bo.K, "Reassembly kernel size")->capture_default_str();
  bench->add_option("--window", bo.h, "Kernel-generation window")->capture_default_str();
  bench->add_option("--d", bo.d, "Compressed channels")->capture_default_str();

  GradcheckOpts go;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  grad->add_option("--seed", go.seed, "First seed")->capture_default_str();
  grad->add_option("--trials", go.trials, "Seeds per op")->check(CLI::PositiveNumber)->capture_default_str();
  grad->add_option("--op", go.ops, "Restrict to these ops");
  grad->add_option("--tol", go.tol, "Relative error tolerance")->capture_default_str();
  grad->add_option("--out", go.out, "Write per-op, per-seed errors as CSV");

  ToyOpts to;
  auto* toy = app.add_subcommand("toy", "Train toy detail-reconstruction arms");
  auto* abl = toy->add_flag("--ablation", to.ablation, "Run all six kinds");
  toy->add_option("--kind", to.kind, "bilinear | carafe | encoder_only | fade_no_gate | fade_skip | fade_full")
      ->excludes(abl);
  toy->add_option("--epochs", to.epochs, "Full-batch SGD steps")->capture_default_str();
  toy->add_option("--lr", to.lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  toy->add_option("--seed", to.seed, "Data and initialization seed")->capture_default_str();
  toy->add_option("--out", to.out, "CSV output path");

  UpsampleOpts uo;
  auto* up = app.add_subcommand("upsample", "Upsample a decoder tensor guided by an encoder tensor");
  up->add_option("--enc", uo.enc, "Encoder FTEN file (n, C, 2H, 2W)")->required();
  up->add_option("--dec", uo.dec, "Decoder FTEN file (n, C, H, W)")->required();
  up->add_option("--params", uo.params, "JSON parameter file or random:<seed>")->capture_default_str();
  up->add_option("--mode", uo.mode, "none | skipping | gating")
      ->check(CLI::IsMember({"none", "skipping", "skip", "gating", "gate"}))
      ->capture_default_str();
  up->add_option("--out", uo.out, "Output FTEN file")->required();
  up->add_option("--dtype", uo.dtype, "Compute precision")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  up->add_option("--save-params", uo.save_params, "Also write the parameters used as JSON");
  up->add_option("--K", uo.K, "Reassembly kernel size (random params)")->capture_default_str();
  up->add_option("--window", uo.h, "Kernel-generation window (random params)")->capture_default_str();
  up->add_option("--d", uo.d, "Compressed channels (random params)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsageError;
  }
  if (fault_inject) fade::fault::arm();

  try {
    if (*verify) return run_verify(vo);
    if (*bench) return run_bench(bo);
    if (*grad) return run_gradcheck(go);
    if (*toy) return run_toy(to);
    if (*up) return run_upsample(uo);
  } catch (const fade::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
