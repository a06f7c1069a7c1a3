#include "euda/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "euda/error.hpp"

namespace euda {
namespace {

constexpr char kMagic[4] = {'E', 'U', 'D', 'M'};
constexpr std::uint16_t kVersion = 1;

DenseLayer init_layer(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (double& w : layer.weight.values()) w = uniform(rng);
  return layer;
}

DenseLayer zeros_like(const DenseLayer& layer) {
  return {Matrix(layer.out(), layer.in()), std::vector<double>(layer.out(), 0.0)};
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

bool same_shape(const Matrix& a, std::size_t rows, std::size_t cols) { return a.rows() == rows && a.cols() == cols; }

void put_vector(io::ByteWriter& out, std::span<const double> v) { out.put_bytes(v.data(), v.size() * sizeof(double)); }

void get_vector(io::ByteReader& in, std::span<double> v) { in.get_bytes(v.data(), v.size() * sizeof(double)); }

}  // namespace

BottleneckConfig BottleneckConfig::parse(std::string_view text) {
  if (text == "S") return small();
  if (text == "B") return base();
  if (text == "L") return large();
  if (text == "H") return huge();
  constexpr std::string_view kCustom = "custom:";
  if (text.substr(0, kCustom.size()) != kCustom) {
    throw ConfigError("bottleneck: expected S, B, L, H or custom:a,b,c, got '" + std::string(text) + "'");
  }
  BottleneckConfig cfg;
  std::string_view rest = text.substr(kCustom.size());
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto token = rest.substr(0, comma);
    std::size_t width = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), width);
    if (ec != std::errc() || ptr != token.data() + token.size() || width == 0) {
      throw ConfigError("bottleneck: bad layer width '" + std::string(token) + "'");
    }
    cfg.hidden_sizes.push_back(width);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  cfg.validate();
  return cfg;
}

void BottleneckConfig::validate() const {
  if (hidden_sizes.empty()) throw ConfigError("bottleneck: needs at least one layer");
  for (std::size_t w : hidden_sizes) {
    if (w == 0) throw ConfigError("bottleneck: layer widths must be positive");
  }
}

void ModelParams::validate() const {
  const std::size_t d = input_norm.gain.size();
  if (d == 0) throw ContractError("model: input dimension is zero");
  if (input_norm.bias.size() != d || input_norm.running_mean.size() != d || input_norm.running_var.size() != d) {
    throw ContractError("model: input normalization vectors disagree in length");
  }
  if (layers.empty()) throw ContractError("model: no bottleneck layers");
  std::size_t width = d;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].in() != width) {
      throw ContractError("model: layer " + std::to_string(k) + " expects input width " +
                          std::to_string(layers[k].in()) + ", previous width is " + std::to_string(width));
    }
    if (layers[k].bias.size() != layers[k].out()) throw ContractError("model: layer bias length mismatch");
    width = layers[k].out();
  }
  if (classifier.in() != width) throw ContractError("model: classifier input width does not match bottleneck");
  if (classifier.bias.size() != classifier.out()) throw ContractError("model: classifier bias length mismatch");
}

ParamGrads ParamGrads::zeros_like(const ModelParams& params) {
  ParamGrads g;
  g.norm_gain.assign(params.input_dim(), 0.0);
  g.norm_bias.assign(params.input_dim(), 0.0);
  for (const auto& layer : params.layers) g.layers.push_back(euda::zeros_like(layer));
  g.classifier = euda::zeros_like(params.classifier);
  return g;
}

void ParamGrads::scale(double factor) {
  auto apply = [factor](std::span<double> v) {
    for (double& x : v) x *= factor;
  };
  apply(norm_gain);
  apply(norm_bias);
  for (auto& layer : layers) {
    apply(layer.weight.values());
    apply(layer.bias);
  }
  apply(classifier.weight.values());
  apply(classifier.bias);
}

void ParamGrads::add(const ParamGrads& other) {
  auto apply = [](std::span<double> dst, std::span<const double> src) {
    if (dst.size() != src.size()) throw ContractError("ParamGrads::add: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  if (layers.size() != other.layers.size()) throw ContractError("ParamGrads::add: layer count mismatch");
  apply(norm_gain, other.norm_gain);
  apply(norm_bias, other.norm_bias);
  for (std::size_t k = 0; k < layers.size(); ++k) {
    apply(layers[k].weight.values(), other.layers[k].weight.values());
    apply(layers[k].bias, other.layers[k].bias);
  }
  apply(classifier.weight.values(), other.classifier.weight.values());
  apply(classifier.bias, other.classifier.bias);
}

bool ParamGrads::congruent_with(const ModelParams& params) const {
  if (norm_gain.size() != params.input_dim() || norm_bias.size() != params.input_dim()) return false;
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (!same_shape(layers[k].weight, params.layers[k].out(), params.layers[k].in())) return false;
    if (layers[k].bias.size() != params.layers[k].out()) return false;
  }
  return same_shape(classifier.weight, params.classifier.out(), params.classifier.in()) &&
         classifier.bias.size() == params.classifier.out();
}

ModelParams build_model(std::size_t input_dim, const BottleneckConfig& config, std::size_t num_classes,
                        std::uint64_t seed) {
  if (input_dim < 1) throw ContractError("build_model: input_dim must be positive");
  if (num_classes < 2) throw ContractError("build_model: need at least two classes");
  config.validate();

  std::mt19937_64 rng(seed);
  ModelParams p;
  p.input_norm.gain.assign(input_dim, 1.0);
  p.input_norm.bias.assign(input_dim, 0.0);
  p.input_norm.running_mean.assign(input_dim, 0.0);
  p.input_norm.running_var.assign(input_dim, 1.0);
  std::size_t in = input_dim;
  for (std::size_t out : config.hidden_sizes) {
    p.layers.push_back(init_layer(out, in, rng));
    in = out;
  }
  p.classifier = init_layer(num_classes, in, rng);
  return p;
}

ForwardTrace forward(const ModelParams& params, const Matrix& x, NormMode mode) {
  const std::size_t d = params.input_dim();
  if (x.cols() != d) {
    throw ContractError("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                        std::to_string(d));
  }
  if (x.rows() == 0) throw ContractError("forward: empty batch");
  if (!x.all_finite()) throw ContractError("forward: non-finite input");

  ForwardTrace t;
  t.mode = mode;
  const std::size_t b = x.rows();
  t.batch_mean.assign(d, 0.0);
  t.batch_std.assign(d, 0.0);
  if (mode == NormMode::kBatch) {
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) t.batch_mean[j] += x(i, j);
    }
    for (double& m : t.batch_mean) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x(i, j) - t.batch_mean[j];
        t.batch_std[j] += c * c;
      }
    }
    for (double& s : t.batch_std) s = std::sqrt(s / static_cast<double>(b));
  } else {
    t.batch_mean = params.input_norm.running_mean;
    for (std::size_t j = 0; j < d; ++j) t.batch_std[j] = std::sqrt(params.input_norm.running_var[j]);
  }

  t.standardized = Matrix(b, d);
  t.normalized = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double s = (x(i, j) - t.batch_mean[j]) / (t.batch_std[j] + kNormEpsilon);
      t.standardized(i, j) = s;
      t.normalized(i, j) = params.input_norm.gain[j] * s + params.input_norm.bias[j];
    }
  }

  const Matrix* input = &t.normalized;
  t.pre_activations.resize(params.layers.size());
  t.activations.resize(params.layers.size());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    affine(*input, params.layers[k].weight, params.layers[k].bias, t.pre_activations[k]);
    t.activations[k] = t.pre_activations[k];
    relu_inplace(t.activations[k]);
    input = &t.activations[k];
  }
  t.embedding = t.activations.back();
  affine(t.embedding, params.classifier.weight, params.classifier.bias, t.logits);
  return t;
}

ParamGrads backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& grad_logits,
                    const Matrix& grad_embedding) {
  const std::size_t b = trace.normalized.rows();
  if (trace.pre_activations.size() != params.layers.size() || trace.normalized.cols() != params.input_dim() ||
      !same_shape(trace.logits, b, params.num_classes()) || !same_shape(trace.embedding, b, params.embedding_width())) {
    throw ContractError("backward: trace does not match these parameters");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    if (!same_shape(trace.pre_activations[k], b, params.layers[k].out())) {
      throw ContractError("backward: trace does not match these parameters");
    }
  }
  if (!same_shape(grad_logits, b, params.num_classes())) throw ContractError("backward: grad_logits has wrong shape");
  if (!same_shape(grad_embedding, b, params.embedding_width())) {
    throw ContractError("backward: grad_embedding has wrong shape");
  }

  ParamGrads g = ParamGrads::zeros_like(params);
  accumulate_at_b(grad_logits, trace.embedding, g.classifier.weight);
  accumulate_col_sums(grad_logits, g.classifier.bias);

  Matrix upstream;
  multiply(grad_logits, params.classifier.weight, upstream);
  for (std::size_t i = 0; i < upstream.size(); ++i) upstream.data()[i] += grad_embedding.data()[i];

  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const Matrix& pre = trace.pre_activations[k];
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      if (!(pre.data()[i] > 0.0)) upstream.data()[i] = 0.0;
    }
    const Matrix& input = k == 0 ? trace.normalized : trace.activations[k - 1];
    accumulate_at_b(upstream, input, g.layers[k].weight);
    accumulate_col_sums(upstream, g.layers[k].bias);
    Matrix next;
    multiply(upstream, params.layers[k].weight, next);
    upstream = std::move(next);
  }

  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < params.input_dim(); ++j) {
      g.norm_gain[j] += upstream(i, j) * trace.standardized(i, j);
      g.norm_bias[j] += upstream(i, j);
    }
  }
  return g;
}

void update_running_stats(ModelParams& params, const ForwardTrace& trace) {
  if (trace.mode != NormMode::kBatch) throw ContractError("update_running_stats: trace used running statistics");
  auto& norm = params.input_norm;
  if (trace.batch_mean.size() != norm.running_mean.size()) throw ContractError("update_running_stats: shape mismatch");
  for (std::size_t j = 0; j < norm.running_mean.size(); ++j) {
    norm.running_mean[j] = kRunningStatDecay * norm.running_mean[j] + (1.0 - kRunningStatDecay) * trace.batch_mean[j];
    norm.running_var[j] = kRunningStatDecay * norm.running_var[j] +
                          (1.0 - kRunningStatDecay) * trace.batch_std[j] * trace.batch_std[j];
  }
}

std::uint64_t count_trainable(std::size_t input_dim, const BottleneckConfig& config, std::size_t num_classes) {
  std::uint64_t total = 2 * static_cast<std::uint64_t>(input_dim);
  std::uint64_t in = input_dim;
  for (std::uint64_t out : config.hidden_sizes) {
    total += out * in + out;
    in = out;
  }
  return total + num_classes * in + num_classes;
}

std::uint64_t count_trainable(const ModelParams& params) {
  std::uint64_t total = params.input_norm.gain.size() + params.input_norm.bias.size();
  for (const auto& layer : params.layers) total += layer.weight.size() + layer.bias.size();
  return total + params.classifier.weight.size() + params.classifier.bias.size();
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  params.validate();
  io::ByteWriter out;
  out.put_bytes(kMagic, 4);
  out.put<std::uint16_t>(kVersion);
  out.put<std::uint64_t>(params.input_dim());
  out.put<std::uint64_t>(params.num_classes());
  out.put<std::uint16_t>(static_cast<std::uint16_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    out.put<std::uint64_t>(layer.out());
    out.put<std::uint64_t>(layer.in());
  }
  put_vector(out, params.input_norm.running_mean);
  put_vector(out, params.input_norm.running_var);
  put_vector(out, params.input_norm.gain);
  put_vector(out, params.input_norm.bias);
  for (const auto& layer : params.layers) {
    put_vector(out, layer.weight.values());
    put_vector(out, layer.bias);
  }
  put_vector(out, params.classifier.weight.values());
  put_vector(out, params.classifier.bias);
  out.write_to(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  char magic[4];
  in.get_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(path.string() + ": bad magic, not a checkpoint");
  const auto version = in.get<std::uint16_t>();
  if (version != kVersion) throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto d = in.get<std::uint64_t>();
  const auto classes = in.get<std::uint64_t>();
  const auto count = in.get<std::uint16_t>();
  if (d == 0 || classes < 2 || count == 0) throw ShapeError(path.string() + ": degenerate model shape in header");

  // Validate the whole shape chain and payload size before allocating.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> dims(count);
  std::uint64_t width = d;
  std::uint64_t doubles = 4 * d;
  for (auto& [out, inw] : dims) {
    out = in.get<std::uint64_t>();
    inw = in.get<std::uint64_t>();
    if (inw != width || out == 0) throw ShapeError(path.string() + ": layer dimensions do not chain");
    if (out > in.remaining() / 8 / inw) throw FormatError(path.string() + ": truncated file");
    doubles += out * inw + out;
    width = out;
  }
  doubles += classes * width + classes;
  if (doubles > in.remaining() / 8) throw FormatError(path.string() + ": truncated file");
  if (doubles * 8 != in.remaining()) throw FormatError(path.string() + ": trailing bytes after tensors");

  ModelParams p;
  p.input_norm.running_mean.resize(d);
  p.input_norm.running_var.resize(d);
  p.input_norm.gain.resize(d);
  p.input_norm.bias.resize(d);
  get_vector(in, p.input_norm.running_mean);
  get_vector(in, p.input_norm.running_var);
  get_vector(in, p.input_norm.gain);
  get_vector(in, p.input_norm.bias);
  for (const auto& [out, inw] : dims) {
    DenseLayer layer{Matrix(out, inw), std::vector<double>(out)};
    get_vector(in, layer.weight.values());
    get_vector(in, layer.bias);
    p.layers.push_back(std::move(layer));
  }
  p.classifier = DenseLayer{Matrix(classes, width), std::vector<double>(classes)};
  get_vector(in, p.classifier.weight.values());
  get_vector(in, p.classifier.bias);
  p.validate();
  return p;
}

void require_shape(const ModelParams& params, std::size_t input_dim, std::optional<std::size_t> num_classes) {
  if (params.input_dim() != input_dim) {
    throw ShapeError("model expects input width " + std::to_string(params.input_dim()) + ", data has " +
                     std::to_string(input_dim));
  }
  if (num_classes && params.num_classes() != *num_classes) {
    throw ShapeError("model has " + std::to_string(params.num_classes()) + " classes, data declares " +
                     std::to_string(*num_classes));
  }
}

}  // namespace euda
