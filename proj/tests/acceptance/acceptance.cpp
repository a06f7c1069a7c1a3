// Acceptance suite: one line per criterion, nonzero exit if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "euda/config.hpp"
#include "euda/error.hpp"
#include "euda/feature_store.hpp"
#include "euda/loss.hpp"
#include "euda/mmd.hpp"
#include "euda/network.hpp"
#include "euda/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace euda;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Verdict()> body;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict parameter_accounting() {
  struct Row {
    std::size_t d;
    const char* preset;
    std::size_t classes;
    double reference;
  };
  const Row rows[] = {{768, "B", 65, 4.4e6},
                      {768, "S", 345, 0.3e6},
                      {1024, "L", 65, 15.6e6},
                      {1024, "H", 65, 53.2e6},
                      {768, "H", 12, 51.1e6}};
  Verdict v;
  for (const Row& r : rows) {
    const auto count = count_trainable(r.d, BottleneckConfig::parse(r.preset), r.classes);
    const auto again = count_trainable(r.d, BottleneckConfig::parse(r.preset), r.classes);
    const double dev = std::abs(static_cast<double>(count) - r.reference) / r.reference;
    v.pass = v.pass && dev <= 0.05 && count == again;
    v.detail += std::string(r.preset) + "(" + std::to_string(r.d) + "," + std::to_string(r.classes) +
                ")=" + std::to_string(count) + fmt(" [%.1f%%] ", 100 * dev);
  }
  return v;
}

Verdict mmd_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ns = 2 + rng() % 11, nt = 2 + rng() % 11, z = 1 + rng() % 4;
    const Matrix a = testing::random_matrix(ns, z, rng);
    Matrix b = testing::random_matrix(nt, z, rng);
    for (std::size_t i = 0; i < nt; ++i) b(i, 0) += 0.5 * (trial % 4);
    const bool linear = trial % 2 == 1;
    const KernelSpec spec = linear ? KernelSpec::linear() : KernelSpec::rbf_median();
    const auto sigmas = resolve_bandwidths(spec, a, b);
    const double ref_b = std::max(oracle::mmd2(a, b, linear, sigmas, false), 0.0);
    const double ref_u = oracle::mmd2(a, b, linear, sigmas, true);
    worst = std::max({worst, std::abs(mmd2_biased(a, b, spec) - ref_b), std::abs(mmd2_unbiased(a, b, spec) - ref_u)});
  }
  return {worst < 1e-10, fmt("max |diff| %.2e over 100 instances (tol 1e-10)", worst)};
}

Verdict linear_identity() {
  std::mt19937_64 rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t z = 1 + rng() % 6;
    const Matrix a = testing::random_matrix(1 + rng() % 16, z, rng);
    const Matrix b = testing::random_matrix(1 + rng() % 16, z, rng, 1.5);
    worst = std::max(worst, std::abs(mmd2_biased(a, b, KernelSpec::linear()) - oracle::mean_diff_sq(a, b)));
  }
  return {worst < 1e-12, fmt("max |diff| %.2e over 100 instances (tol 1e-12)", worst)};
}

bool same_relu_pattern(const ForwardTrace& a, const ForwardTrace& b) {
  for (std::size_t k = 0; k < a.pre_activations.size(); ++k) {
    for (std::size_t i = 0; i < a.pre_activations[k].size(); ++i) {
      if ((a.pre_activations[k].data()[i] > 0) != (b.pre_activations[k].data()[i] > 0)) return false;
    }
  }
  return true;
}

double network_fd_error() {
  std::mt19937_64 rng(5);
  ModelParams p = build_model(5, {{7, 4}}, 3, 3);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& g : p.input_norm.gain) g += n(rng);
  for (double& b : p.input_norm.bias) b = n(rng);
  for (auto& l : p.layers) {
    for (double& b : l.bias) b = n(rng);
  }
  const Matrix x = testing::random_matrix(6, 5, rng);
  const Matrix gl = testing::random_matrix(6, 3, rng);
  const Matrix gz = testing::random_matrix(6, 4, rng);
  auto probe = [&](const ForwardTrace& t) {
    double s = 0;
    for (std::size_t i = 0; i < gl.size(); ++i) s += t.logits.data()[i] * gl.data()[i];
    for (std::size_t i = 0; i < gz.size(); ++i) s += t.embedding.data()[i] * gz.data()[i];
    return s;
  };
  const auto base = forward(p, x);
  const ParamGrads g = backward(p, base, gl, gz);
  const double h = 1e-5;
  double worst = 0;
  for_each_tensor(p, g, [&](std::span<double> theta, std::span<const double> grad) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const auto up = forward(p, x);
      theta[i] = saved - h;
      const auto down = forward(p, x);
      theta[i] = saved;
      if (!same_relu_pattern(up, base) || !same_relu_pattern(down, base)) continue;
      worst = std::max(worst, testing::rel_err(grad[i], (probe(up) - probe(down)) / (2 * h), kGradCheckFloor));
    }
  });
  return worst;
}

Verdict gradient_suite() {
  const double net = network_fd_error();
  Verdict v{net < 1e-6, fmt("network %.2e (tol 1e-6);", net)};
  auto [s, t] = synth_shifted_gaussians(SynthSpec{3, 6, 8, 3.0, 1.5, 1.0}, 11);
  const BatchPair batch = paired_batches(s, t, 8, 11, 0).front();
  const ModelParams params = build_model(6, {{8, 4}}, 3, 5);
  for (double lambda : {0.0, 0.7, 1.0}) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    const auto r = grad_check(params, batch, cfg, 1e-5);
    v.pass = v.pass && r.max_relative_error < 1e-5 && r.checked > 0;
    v.detail += fmt(" sdal(lambda=%.1f)", lambda) + fmt(" %.2e", r.max_relative_error);
  }
  v.detail += " (tol 1e-5)";
  return v;
}

Verdict ce_properties() {
  std::mt19937_64 rng(8);
  double uniform = 0, shift = 0, rowsum = 0;
  for (std::size_t c : {2u, 3u, 10u, 65u}) {
    const auto ce = softmax_cross_entropy(Matrix(5, c, -0.75), std::vector<std::uint32_t>{0, 1, 1, 0, 1});
    uniform = std::max(uniform, std::abs(ce.value - std::log(static_cast<double>(c))));
  }
  const Matrix logits = testing::random_matrix(8, 5, rng, 3.0);
  std::vector<std::uint32_t> labels(8);
  for (auto& y : labels) y = static_cast<std::uint32_t>(rng() % 5);
  const auto ce = softmax_cross_entropy(logits, labels);
  for (double k : {-100.0, 3.0, 250.0}) {
    Matrix moved = logits;
    for (double& x : moved.values()) x += k;
    shift = std::max(shift, std::abs(softmax_cross_entropy(moved, labels).value - ce.value));
  }
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0;
    for (double g : ce.grad_logits.row(i)) s += g;
    rowsum = std::max(rowsum, std::abs(s));
  }
  const auto big = softmax_cross_entropy(Matrix(2, 3, {1000, -1000, 0, -1000, 1000, 1000}),
                                         std::vector<std::uint32_t>{1, 2});
  const bool finite = std::isfinite(big.value) && big.grad_logits.all_finite();
  return {uniform < 1e-12 && shift < 1e-10 && rowsum < 1e-12 && finite,
          fmt("ln C %.1e,", uniform) + fmt(" shift %.1e,", shift) + fmt(" row sums %.1e,", rowsum) +
              (finite ? " |logit|=1000 finite" : " |logit|=1000 overflowed")};
}

struct AblationRun {
  double target = 0;
  double source = 0;
};

AblationRun ablation_mean(double lambda) {
  const SynthSpec spec{3, 16, 100, 4.0, 2.5, 1.0};
  AblationRun mean;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto [s, t] = synth_shifted_gaussians(spec, seed);
    const DomainDataset held_out = t;
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.bottleneck = {{32, 16}};
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const auto r = train(s, t, cfg);
    mean.target += evaluate(r.params, held_out) / 5;
    mean.source += evaluate(r.params, s) / 5;
  }
  return mean;
}

Verdict ablation() {
  const AblationRun adapted = ablation_mean(0.7);
  const AblationRun source_only = ablation_mean(1.0);
  const double gap = 100 * (adapted.target - source_only.target);
  return {gap >= 5.0 && adapted.source >= 0.95,
          fmt("target acc lambda=0.7 %.2f%%", 100 * adapted.target) +
              fmt(" vs lambda=1.0 %.2f%%", 100 * source_only.target) + fmt(", gap %.2f pts (need >= 5)", gap) +
              fmt("; source acc lambda=0.7 %.2f%% (need >= 95)", 100 * adapted.source)};
}

Verdict lambda_sensitivity() {
  const double at07 = ablation_mean(0.7).target;
  const double at05 = ablation_mean(0.5).target;
  const double at03 = ablation_mean(0.3).target;
  return {at07 >= std::max(at05, at03) - 0.01, fmt("target acc lambda=0.3 %.2f%%", 100 * at03) +
                                                   fmt(", 0.5 %.2f%%", 100 * at05) +
                                                   fmt(", 0.7 %.2f%% (non-inferior within 1 pt)", 100 * at07)};
}

Verdict determinism() {
  testing::TempDir dir("acceptance_det");
  auto [s, t] = synth_shifted_gaussians(SynthSpec{3, 16, 100, 4.0, 2.5, 1.0}, 1);
  TrainConfig cfg;
  cfg.bottleneck = {{32, 16}};
  cfg.seed = 1;
  std::string logs[2];
  for (int k = 0; k < 2; ++k) {
    const auto r = train(s, t, cfg, &t);
    save_checkpoint(r.params, dir / ("m" + std::to_string(k) + ".eudm"));
    for (const auto& m : r.metrics) logs[k] += metrics_to_json(m) + "\n";
  }
  const bool ckpt = file_bytes(dir / "m0.eudm") == file_bytes(dir / "m1.eudm");
  const bool metrics = logs[0] == logs[1];
  return {ckpt && metrics, std::string("checkpoints ") + (ckpt ? "identical" : "DIFFER") + ", metrics logs " +
                               (metrics ? "identical" : "DIFFER")};
}

Verdict uda_contract() {
  auto [s, t] = synth_shifted_gaussians(SynthSpec{3, 16, 100, 4.0, 2.5, 1.0}, 2);
  const DomainDataset held_out = t;
  TrainConfig cfg;
  cfg.bottleneck = {{32, 16}};
  train(s, t, cfg, &held_out);
  return {t.label_reads() == 0 && s.label_reads() > 0,
          "target label reads during training: " + std::to_string(t.label_reads()) +
              " (source reads: " + std::to_string(s.label_reads()) + ")"};
}

Verdict format_round_trips() {
  testing::TempDir dir("acceptance_fmt");
  std::mt19937_64 rng(10);
  bool binary_ok = true;
  double csv_err = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 40, d = 1 + rng() % 12;
    std::vector<std::uint32_t> labels(n);
    for (auto& y : labels) y = static_cast<std::uint32_t>(rng() % 4);
    const DomainDataset ds(testing::random_matrix(n, d, rng, 5.0), labels, 4, "fixture");
    save_dataset(ds, dir / "a.eudf", FileFormat::kBinary);
    const DomainDataset back = load_dataset(dir / "a.eudf");
    save_dataset(back, dir / "b.eudf", FileFormat::kBinary);
    binary_ok = binary_ok && back.same_content(ds) && file_bytes(dir / "a.eudf") == file_bytes(dir / "b.eudf");
    save_dataset(ds, dir / "a.csv", FileFormat::kCsv);
    const DomainDataset csv = load_dataset(dir / "a.csv", FileFormat::kCsv, 4u);
    for (std::size_t i = 0; i < ds.features().size(); ++i) {
      csv_err = std::max(csv_err, std::abs(csv.features().data()[i] - ds.features().data()[i]));
    }
    binary_ok = binary_ok && csv.labels() == ds.labels();
  }

  std::string bytes = file_bytes(dir / "a.eudf");
  bytes[0] = 'X';
  std::ofstream(dir / "magic.eudf", std::ios::binary) << bytes;
  bool magic_rejected = false;
  try {
    load_dataset(dir / "magic.eudf");
  } catch (const FormatError&) {
    magic_rejected = true;
  }
  std::ofstream(dir / "nan.csv") << "f0,f1,label\n0.5,nan,1\n";
  bool nan_rejected = false;
  try {
    load_dataset(dir / "nan.csv");
  } catch (const DataError&) {
    nan_rejected = true;
  }
  return {binary_ok && csv_err <= 1e-6 && magic_rejected && nan_rejected,
          std::string("binary ") + (binary_ok ? "bitwise" : "MISMATCH") + fmt(", csv max err %.1e", csv_err) +
              ", bad magic " + (magic_rejected ? "FormatError" : "NOT rejected") + ", NaN " +
              (nan_rejected ? "DataError" : "NOT rejected")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "parameter accounting", 1, parameter_accounting},
      {2, "MMD oracle equivalence", 10, mmd_oracle},
      {3, "linear-kernel identity", 1, linear_identity},
      {4, "gradient suite", 30, gradient_suite},
      {5, "cross-entropy properties", 1, ce_properties},
      {6, "ablation pattern", 120, ablation},
      {7, "lambda sensitivity", 240, lambda_sensitivity},
      {8, "determinism", 60, determinism},
      {9, "UDA label contract", 60, uda_contract},
      {10, "format round trips", 5, format_round_trips},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs < c.budget_seconds;
    const bool pass = v.pass && in_budget;
    if (!pass) ++failures;
    std::printf("[%s] %2d %s: %s (%.2fs, budget %.0fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                v.detail.c_str(), secs, c.budget_seconds, in_budget ? "" : ", OVER BUDGET");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
