#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "euda/error.hpp"
#include "euda/network.hpp"
#include "euda/trainer.hpp"
#include "test_util.hpp"

using namespace euda;
using euda::testing::TempDir;

namespace {

// Straight-line dense evaluation, independent of the library's matrix helpers.
struct OracleOut {
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> logits;
};

OracleOut oracle_forward(const ModelParams& p, const Matrix& x) {
  const std::size_t b = x.rows(), d = x.cols();
  std::vector<std::vector<double>> h(b, std::vector<double>(d));
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < b; ++i) mu += x(i, j);
    mu /= b;
    double var = 0;
    for (std::size_t i = 0; i < b; ++i) var += (x(i, j) - mu) * (x(i, j) - mu);
    const double sd = std::sqrt(var / b);
    for (std::size_t i = 0; i < b; ++i) {
      h[i][j] = p.input_norm.gain[j] * (x(i, j) - mu) / (sd + 1e-5) + p.input_norm.bias[j];
    }
  }
  for (const auto& layer : p.layers) {
    std::vector<std::vector<double>> next(b, std::vector<double>(layer.out()));
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t o = 0; o < layer.out(); ++o) {
        double s = layer.bias[o];
        for (std::size_t k = 0; k < layer.in(); ++k) s += layer.weight(o, k) * h[i][k];
        next[i][o] = s > 0 ? s : 0;
      }
    }
    h = std::move(next);
  }
  OracleOut out{h, {}};
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> row(p.num_classes());
    for (std::size_t c = 0; c < row.size(); ++c) {
      double s = p.classifier.bias[c];
      for (std::size_t k = 0; k < p.classifier.in(); ++k) s += p.classifier.weight(c, k) * h[i][k];
      row[c] = s;
    }
    out.logits.push_back(row);
  }
  return out;
}

double linear_probe(const ForwardTrace& t, const Matrix& gl, const Matrix& gz) {
  double s = 0;
  for (std::size_t i = 0; i < gl.size(); ++i) s += t.logits.data()[i] * gl.data()[i];
  for (std::size_t i = 0; i < gz.size(); ++i) s += t.embedding.data()[i] * gz.data()[i];
  return s;
}

bool same_relu_pattern(const ForwardTrace& a, const ForwardTrace& b) {
  for (std::size_t k = 0; k < a.pre_activations.size(); ++k) {
    for (std::size_t i = 0; i < a.pre_activations[k].size(); ++i) {
      if ((a.pre_activations[k].data()[i] > 0) != (b.pre_activations[k].data()[i] > 0)) return false;
    }
  }
  return true;
}

// Perturb the input-norm gain/bias too so their gradients are non-trivial.
ModelParams jittered_model(std::size_t d, BottleneckConfig cfg, std::size_t c, std::uint64_t seed) {
  ModelParams p = build_model(d, cfg, c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& g : p.input_norm.gain) g += n(rng);
  for (double& b : p.input_norm.bias) b = n(rng);
  for (auto& l : p.layers) {
    for (double& b : l.bias) b = n(rng);
  }
  for (double& b : p.classifier.bias) b = n(rng);
  return p;
}

}  // namespace

TEST_CASE("build_model: base preset shapes") {
  const ModelParams p = build_model(768, BottleneckConfig::base(), 65, 1);
  REQUIRE(p.layers.size() == 4);
  const std::size_t expected[4][2] = {{2048, 768}, {1024, 2048}, {512, 1024}, {256, 512}};
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(p.layers[k].out() == expected[k][0]);
    CHECK(p.layers[k].in() == expected[k][1]);
  }
  CHECK(p.classifier.out() == 65);
  CHECK(p.classifier.in() == 256);
  CHECK(count_trainable(p) == 4347457);
  CHECK(count_trainable(p) == count_trainable(768, BottleneckConfig::base(), 65));
}

TEST_CASE("build_model: tiny chain, zero biases, init bounds, determinism") {
  const ModelParams p = build_model(4, {{3}}, 2, 7);
  CHECK(p.layers[0].weight.rows() == 3);
  CHECK(p.layers[0].weight.cols() == 4);
  CHECK(p.classifier.weight.rows() == 2);
  CHECK(p.classifier.weight.cols() == 3);
  for (double b : p.layers[0].bias) CHECK(b == 0.0);
  for (double b : p.classifier.bias) CHECK(b == 0.0);
  for (double w : p.layers[0].weight.values()) CHECK(std::abs(w) <= std::sqrt(6.0 / 4));
  for (double w : p.classifier.weight.values()) CHECK(std::abs(w) <= std::sqrt(6.0 / 3));
  for (double g : p.input_norm.gain) CHECK(g == 1.0);
  CHECK(p == build_model(4, {{3}}, 2, 7));
  CHECK_FALSE(p == build_model(4, {{3}}, 2, 8));
  CHECK_THROWS_AS(build_model(4, {{3}}, 1, 7), ContractError);
  CHECK_THROWS(build_model(4, {{}}, 2, 7));
}

TEST_CASE("count_trainable closed form on random shapes") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng() % 9, c = 2 + rng() % 5;
    BottleneckConfig cfg;
    for (std::size_t k = 0, n = 1 + rng() % 4; k < n; ++k) cfg.hidden_sizes.push_back(1 + rng() % 12);
    std::uint64_t closed = 2 * d;
    std::size_t in = d;
    for (std::size_t o : cfg.hidden_sizes) closed += o * in + o, in = o;
    closed += c * in + c;
    CHECK(count_trainable(build_model(d, cfg, c, 0)) == closed);
    CHECK(count_trainable(d, cfg, c) == closed);
  }
}

TEST_CASE("bottleneck parsing") {
  CHECK(BottleneckConfig::parse("S") == BottleneckConfig::small());
  CHECK(BottleneckConfig::parse("H").hidden_sizes.size() == 6);
  CHECK(BottleneckConfig::parse("custom:32,16").hidden_sizes == std::vector<std::size_t>{32, 16});
  CHECK_THROWS_AS(BottleneckConfig::parse("XL"), ConfigError);
  CHECK_THROWS_AS(BottleneckConfig::parse("custom:3,0"), ConfigError);
  CHECK_THROWS_AS(BottleneckConfig::parse("custom:"), ConfigError);
}

TEST_CASE("forward: zero weights give zero embedding and logits") {
  ModelParams p = build_model(3, {{4, 2}}, 3, 1);
  for (auto& l : p.layers) l.weight.fill(0.0);
  p.classifier.weight.fill(0.0);
  std::mt19937_64 rng(1);
  const auto t = forward(p, testing::random_matrix(5, 3, rng));
  for (double v : t.embedding.values()) CHECK(v == 0.0);
  for (double v : t.logits.values()) CHECK(v == 0.0);
}

TEST_CASE("forward: ReLU clamps a negative pre-activation to zero") {
  // One layer of width d with identity weights; bias shifts the standardized
  // value -1 of the first column to -0.5 before the ReLU.
  ModelParams p = build_model(2, {{2}}, 2, 1);
  p.layers[0].weight = Matrix(2, 2, {1, 0, 0, 1});
  p.layers[0].bias = {0.5, 0.0};
  const Matrix x(2, 2, {-1, 3, 1, 5});  // column 0 standardizes to {-1, 1} (up to eps)
  const auto t = forward(p, x);
  CHECK(t.pre_activations[0](0, 0) == doctest::Approx(-0.5).epsilon(1e-4));
  CHECK(t.embedding(0, 0) == 0.0);
  CHECK(t.embedding(1, 0) == doctest::Approx(1.5).epsilon(1e-4));
}

TEST_CASE("forward matches the dense oracle to 1e-12") {
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = jittered_model(4, {{3}}, 2, seed);
    const Matrix x = testing::random_matrix(5, 4, rng);
    const auto t = forward(p, x);
    const auto o = oracle_forward(p, x);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(t.logits(i, c) - o.logits[i][c]) < 1e-12);
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(t.embedding(i, k) - o.z[i][k]) < 1e-12);
    }
  }
}

TEST_CASE("forward: logits are 1-homogeneous in the classifier") {
  std::mt19937_64 rng(2);
  ModelParams p = build_model(5, {{6}}, 3, 3);
  const Matrix x = testing::random_matrix(4, 5, rng);
  const auto base = forward(p, x);
  for (double& w : p.classifier.weight.values()) w *= 2.5;
  for (double& b : p.classifier.bias) b *= 2.5;
  const auto scaled = forward(p, x);
  for (std::size_t i = 0; i < base.logits.size(); ++i) {
    CHECK(scaled.logits.data()[i] == doctest::Approx(2.5 * base.logits.data()[i]).epsilon(1e-13));
  }
}

TEST_CASE("forward rejects wrong width and non-finite inputs") {
  const ModelParams p = build_model(3, {{2}}, 2, 0);
  CHECK_THROWS_AS(forward(p, Matrix(2, 4)), ContractError);
  CHECK_THROWS_AS(forward(p, Matrix(2, 3, {1, 2, 3, 4, std::nan(""), 6})), ContractError);
}

TEST_CASE("running-statistics mode uses the accumulated mean and variance") {
  ModelParams p = build_model(2, {{3}}, 2, 0);
  const Matrix x(3, 2, {1, 10, 2, 20, 3, 60});
  const auto t = forward(p, x);
  update_running_stats(p, t);
  CHECK(p.input_norm.running_mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2));
  CHECK(p.input_norm.running_var[0] == doctest::Approx(0.9 * 1 + 0.1 * (2.0 / 3.0)));
  const auto e = forward(p, x, NormMode::kRunning);
  CHECK(e.standardized(0, 0) == doctest::Approx((1 - 0.2) / (std::sqrt(p.input_norm.running_var[0]) + 1e-5)));
  CHECK_THROWS_AS(update_running_stats(p, e), ContractError);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  std::mt19937_64 rng(4);
  const ModelParams p = build_model(3, {{4, 2}}, 3, 1);
  const auto t = forward(p, testing::random_matrix(5, 3, rng));
  const auto g = backward(p, t, Matrix(5, 3), Matrix(5, 2));
  for_each_tensor(p, g, [](auto, auto grad) {
    for (double v : grad) CHECK(v == 0.0);
  });
}

TEST_CASE("backward: single linear layer weight gradient is an outer product") {
  // 2x2 case, all pre-activations positive, gradient seeded on one logit.
  ModelParams p = build_model(2, {{2}}, 2, 0);
  p.layers[0].weight = Matrix(2, 2, {1, 0, 0, 1});
  p.layers[0].bias = {5, 5};
  p.classifier.weight = Matrix(2, 2, {0.3, -0.7, 1.1, 0.4});
  const Matrix x(2, 2, {1, 4, 3, 2});
  const auto t = forward(p, x);
  Matrix gl(2, 2);
  gl(1, 0) = 1.0;  // d/d logit[1][0]
  const auto g = backward(p, t, gl, Matrix(2, 2));
  // Classifier: dW[0][k] = Z[1][k]; layer: dW[o][k] = Wc[0][o] * normalized[1][k].
  CHECK(g.classifier.weight(0, 0) == t.embedding(1, 0));
  CHECK(g.classifier.weight(0, 1) == t.embedding(1, 1));
  CHECK(g.classifier.weight(1, 0) == 0.0);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(g.layers[0].weight(o, k) == doctest::Approx(p.classifier.weight(0, o) * t.normalized(1, k)));
    }
  }
}

TEST_CASE("backward matches central finite differences on every parameter group") {
  std::mt19937_64 rng(21);
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ModelParams p = jittered_model(5, {{7, 4}}, 3, seed);
    const Matrix x = testing::random_matrix(6, 5, rng);
    const Matrix gl = testing::random_matrix(6, 3, rng);
    const Matrix gz = testing::random_matrix(6, 4, rng);
    const auto base = forward(p, x);
    const ParamGrads g = backward(p, base, gl, gz);

    double worst = 0;
    std::size_t checked = 0;
    for_each_tensor(p, g, [&](std::span<double> theta, std::span<const double> grad) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const auto tp = forward(p, x);
        theta[i] = saved - h;
        const auto tm = forward(p, x);
        theta[i] = saved;
        if (!same_relu_pattern(tp, base) || !same_relu_pattern(tm, base)) continue;
        const double numeric = (linear_probe(tp, gl, gz) - linear_probe(tm, gl, gz)) / (2 * h);
        worst = std::max(worst, testing::rel_err(grad[i], numeric, kGradCheckFloor));
        ++checked;
      }
    });
    CHECK(checked > count_trainable(p) / 2);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("backward rejects a stale trace") {
  std::mt19937_64 rng(1);
  const ModelParams a = build_model(3, {{4}}, 2, 0);
  const ModelParams b = build_model(3, {{5}}, 2, 0);
  const auto t = forward(a, testing::random_matrix(4, 3, rng));
  CHECK_THROWS_AS(backward(b, t, Matrix(4, 2), Matrix(4, 5)), ContractError);
  CHECK_THROWS_AS(backward(a, t, Matrix(3, 2), Matrix(4, 4)), ContractError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  TempDir dir("ckpt");
  ModelParams p = jittered_model(6, {{5, 3}}, 4, 9);
  p.input_norm.running_mean = {1, 2, 3, 4, 5, 6.5};
  save_checkpoint(p, dir / "m.eudm");
  const ModelParams back = load_checkpoint(dir / "m.eudm");
  CHECK(back == p);
}

TEST_CASE("checkpoint errors: truncated, bad magic, shape mismatch") {
  TempDir dir("ckpt2");
  const ModelParams p = build_model(8, {{4}}, 3, 0);
  save_checkpoint(p, dir / "m.eudm");
  std::ifstream in(dir / "m.eudm", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(dir / "t.eudm", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.eudm"), FormatError);
  std::ofstream(dir / "h.eudm", std::ios::binary) << bytes.substr(0, 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "h.eudm"), FormatError);
  bytes[1] = 'Z';
  std::ofstream(dir / "b.eudm", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "b.eudm"), FormatError);

  const ModelParams big = build_model(768, {{4}}, 3, 0);
  save_checkpoint(big, dir / "big.eudm");
  CHECK_THROWS_AS(require_shape(load_checkpoint(dir / "big.eudm"), 1024), ShapeError);
  CHECK_NOTHROW(require_shape(load_checkpoint(dir / "big.eudm"), 768, 3));
}
