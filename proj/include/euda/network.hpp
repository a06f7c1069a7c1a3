#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "euda/matrix.hpp"

namespace euda {

struct BottleneckConfig {
  // Output width of each fully connected layer; the last one is the embedding
  // width shared by the classifier and the alignment loss.
  std::vector<std::size_t> hidden_sizes;

  static BottleneckConfig small() { return {{256}}; }
  static BottleneckConfig base() { return {{2048, 1024, 512, 256}}; }
  static BottleneckConfig large() { return {{4096, 2048, 1024, 512, 256}}; }
  static BottleneckConfig huge() { return {{8192, 4096, 2048, 1024, 512, 256}}; }

  // "S", "B", "L", "H" or "custom:a,b,c". Throws ConfigError otherwise.
  static BottleneckConfig parse(std::string_view text);

  std::size_t embedding_width() const { return hidden_sizes.back(); }
  void validate() const;

  friend bool operator==(const BottleneckConfig&, const BottleneckConfig&) = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Trainable per-dimension affine applied to standardized inputs, plus the
// running statistics used for standardization outside of training.
struct InputNorm {
  std::vector<double> gain;
  std::vector<double> bias;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  friend bool operator==(const InputNorm&, const InputNorm&) = default;
};

struct ModelParams {
  InputNorm input_norm;
  std::vector<DenseLayer> layers;
  DenseLayer classifier;

  std::size_t input_dim() const { return input_norm.gain.size(); }
  std::size_t num_classes() const { return classifier.out(); }
  std::size_t embedding_width() const { return classifier.in(); }

  // Throws ContractError if the layer dimensions do not chain.
  void validate() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Same layout as ModelParams minus the running statistics.
struct ParamGrads {
  std::vector<double> norm_gain;
  std::vector<double> norm_bias;
  std::vector<DenseLayer> layers;
  DenseLayer classifier;

  static ParamGrads zeros_like(const ModelParams& params);
  void scale(double factor);
  void add(const ParamGrads& other);
  bool congruent_with(const ModelParams& params) const;
};

constexpr double kNormEpsilon = 1e-5;
constexpr double kRunningStatDecay = 0.9;

enum class NormMode {
  kBatch,    // standardize with the statistics of this batch
  kRunning,  // standardize with the accumulated running statistics
};

struct ForwardTrace {
  NormMode mode = NormMode::kBatch;
  std::vector<double> batch_mean;
  std::vector<double> batch_std;  // population standard deviation
  Matrix standardized;            // (x - mean) / (std + eps)
  Matrix normalized;              // gain * standardized + bias
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> activations;
  Matrix embedding;  // final bottleneck activation (Z)
  Matrix logits;
};

ModelParams build_model(std::size_t input_dim, const BottleneckConfig& config, std::size_t num_classes,
                        std::uint64_t seed);

ForwardTrace forward(const ModelParams& params, const Matrix& x, NormMode mode = NormMode::kBatch);

// Reverse-mode gradient of sum(logits .* grad_logits) + sum(Z .* grad_embedding)
// with respect to every trainable parameter.
ParamGrads backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& grad_logits,
                    const Matrix& grad_embedding);

// Folds the batch statistics of a kBatch trace into the running statistics.
void update_running_stats(ModelParams& params, const ForwardTrace& trace);

std::uint64_t count_trainable(const ModelParams& params);
std::uint64_t count_trainable(std::size_t input_dim, const BottleneckConfig& config, std::size_t num_classes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Throws ShapeError unless params fit a pipeline with this input width and
// (optionally) class count.
void require_shape(const ModelParams& params, std::size_t input_dim,
                   std::optional<std::size_t> num_classes = std::nullopt);

// Visits each trainable tensor of params and grads in declaration order.
template <class Params, class Grads, class Fn>
void for_each_tensor(Params& params, Grads& grads, Fn&& fn) {
  fn(std::span(params.input_norm.gain), std::span(grads.norm_gain));
  fn(std::span(params.input_norm.bias), std::span(grads.norm_bias));
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    fn(params.layers[k].weight.values(), grads.layers[k].weight.values());
    fn(std::span(params.layers[k].bias), std::span(grads.layers[k].bias));
  }
  fn(params.classifier.weight.values(), grads.classifier.weight.values());
  fn(std::span(params.classifier.bias), std::span(grads.classifier.bias));
}

}  // namespace euda
