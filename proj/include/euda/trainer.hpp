#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "euda/feature_store.hpp"
#include "euda/loss.hpp"
#include "euda/mmd.hpp"
#include "euda/network.hpp"

namespace euda {

struct TrainConfig {
  double lambda = 0.7;
  double lr0 = 3e-2;
  // Inverse-decay schedule: lr0 * (1 + gamma * p)^(-alpha), p = step / total.
  double gamma = 10.0;
  double alpha = 0.75;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  KernelSpec kernel = KernelSpec::rbf_median();
  BottleneckConfig bottleneck = BottleneckConfig::small();
  Estimator estimator = Estimator::kBiased;
  // Write a checkpoint every k epochs through TrainHooks (0 = only at the end).
  std::size_t checkpoint_every = 0;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_mmd = 0.0;
  double source_batch_accuracy = 0.0;
  // Set on the last step of each epoch when an evaluation set was supplied.
  std::optional<double> target_accuracy;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// Loss and parameter gradient of one SDAL step on a batch pair. Source and
// target rows go through the network as one batch, so input standardization
// uses the pooled batch statistics. Overflowing activations give a NaN loss and
// zero gradients.
struct StepResult {
  LossBreakdown loss;
  ParamGrads grads;
  ForwardTrace trace;
  double source_accuracy = 0.0;
};

// `frozen_kernel`, if given, replaces cfg.kernel (used to pin median-heuristic
// bandwidths during finite differencing).
StepResult sdal_step(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                     const KernelSpec* frozen_kernel = nullptr);

// Loss only; same conventions as sdal_step.
LossBreakdown sdal_loss(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                        const KernelSpec* frozen_kernel = nullptr);

// In-place SGD with classical momentum:
//   v <- momentum * v + (g + weight_decay * theta);  theta <- theta - lr * v
class MomentumSgd {
 public:
  MomentumSgd(const ModelParams& params, double momentum, double weight_decay);
  void step(ModelParams& params, const ParamGrads& grads, double lr);

 private:
  ParamGrads velocity_;
  double momentum_;
  double weight_decay_;
};

struct TrainHooks {
  // Called after each epoch with that epoch's records.
  std::function<void(std::size_t epoch, const ModelParams&, std::span<const MetricsRecord>)> on_epoch_end;
};

struct TrainResult {
  ModelParams params;
  std::vector<MetricsRecord> metrics;
};

// Runs the full optimisation loop. Never reads target labels: per-epoch target
// accuracy is computed on `evaluation_set` (normally a labelled copy of the
// target held by the caller) when one is supplied.
TrainResult train(const DomainDataset& source, const DomainDataset& target, const TrainConfig& cfg,
                  const DomainDataset* evaluation_set = nullptr, const TrainHooks& hooks = {});

// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
// Standardizes with the running statistics.
double evaluate(const ModelParams& params, const DomainDataset& ds);

std::vector<std::uint32_t> predict(const ModelParams& params, const Matrix& features);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_near_kink = 0;
};

// Relative error floor: |analytic - numeric| / max(|analytic|, |numeric|, floor).
constexpr double kGradCheckFloor = 1e-4;

// Compares the SDAL gradient of sdal_step with central differences on every
// trainable parameter. Parameters whose perturbation flips any ReLU are skipped.
GradCheckReport grad_check(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                           double epsilon = 1e-5);

}  // namespace euda
