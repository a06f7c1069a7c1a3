#include "euda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "euda/error.hpp"

namespace euda {
namespace {

Matrix top_rows(const Matrix& m, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data(), count * m.cols(), out.data());
  return out;
}

Matrix bottom_rows(const Matrix& m, std::size_t from) {
  Matrix out(m.rows() - from, m.cols());
  std::copy_n(m.data() + from * m.cols(), out.size(), out.data());
  return out;
}

std::uint32_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return static_cast<std::uint32_t>(best);
}

void check_batch(const ModelParams& params, const BatchPair& batch) {
  if (batch.source_features.rows() < 2 || batch.target_features.rows() < 2) {
    throw ContractError("batch pair needs at least two rows per domain");
  }
  if (batch.source_labels.size() != batch.source_features.rows()) throw ContractError("batch: label count mismatch");
  if (batch.source_features.cols() != params.input_dim() || batch.target_features.cols() != params.input_dim()) {
    throw ContractError("batch: feature width does not match the model");
  }
}

struct ForwardSplit {
  ForwardTrace trace;
  Matrix source_logits;
  Matrix source_embedding;
  Matrix target_embedding;
};

ForwardSplit joint_forward(const ModelParams& params, const BatchPair& batch) {
  check_batch(params, batch);
  ForwardSplit f;
  f.trace = forward(params, vstack(batch.source_features, batch.target_features), NormMode::kBatch);
  const std::size_t bs = batch.source_features.rows();
  f.source_logits = top_rows(f.trace.logits, bs);
  f.source_embedding = top_rows(f.trace.embedding, bs);
  f.target_embedding = bottom_rows(f.trace.embedding, bs);
  return f;
}

double mmd_value(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel, Estimator estimator) {
  return estimator == Estimator::kBiased ? mmd2_biased(zs, zt, kernel) : mmd2_unbiased(zs, zt, kernel);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid config field '" + field + "': " + why);
  };
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda", "must lie in [0, 1]");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0", "must be positive");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma", "must be non-negative");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha", "must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay", "must be non-negative");
  if (epochs < 1) fail("epochs", "must be positive");
  if (batch_size < 2) fail("batch_size", "must be at least 2");
  try {
    kernel.validate();
  } catch (const ConfigError& e) {
    fail("kernel", e.what());
  }
  try {
    bottleneck.validate();
  } catch (const ConfigError& e) {
    fail("bottleneck", e.what());
  }
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 1) throw ContractError("lr_at: total_steps must be positive");
  if (step > total_steps) throw ContractError("lr_at: step beyond total_steps");
  const double p = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr0 * std::pow(1.0 + cfg.gamma * p, -cfg.alpha);
}

StepResult sdal_step(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                     const KernelSpec* frozen_kernel) {
  ForwardSplit f = joint_forward(params, batch);
  const KernelSpec& kernel = frozen_kernel ? *frozen_kernel : cfg.kernel;
  if (!f.trace.logits.all_finite() || !f.trace.embedding.all_finite()) {
    StepResult r;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.loss = {nan, nan, nan, cfg.lambda};
    r.grads = ParamGrads::zeros_like(params);
    r.trace = std::move(f.trace);
    return r;
  }

  const CrossEntropy ce = softmax_cross_entropy(f.source_logits, batch.source_labels);
  const MmdGradient mmd = mmd2_grad(f.source_embedding, f.target_embedding, kernel, cfg.estimator);
  const SeededGradients seeds =
      sdal_combine(ce.value, ce.grad_logits, mmd.value, mmd.d_source, mmd.d_target, cfg.lambda);

  // Target rows feed the alignment term only; the classifier sees source CE.
  const std::size_t bt = batch.target_features.rows();
  Matrix grad_logits = vstack(seeds.grad_logits, Matrix(bt, params.num_classes()));
  Matrix grad_embedding = vstack(seeds.grad_source_embedding, seeds.grad_target_embedding);

  StepResult r;
  r.loss = seeds.loss;
  r.grads = backward(params, f.trace, grad_logits, grad_embedding);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < f.source_logits.rows(); ++i) {
    if (argmax(f.source_logits.row(i)) == batch.source_labels[i]) ++correct;
  }
  r.source_accuracy = static_cast<double>(correct) / static_cast<double>(f.source_logits.rows());
  r.trace = std::move(f.trace);
  return r;
}

LossBreakdown sdal_loss(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                        const KernelSpec* frozen_kernel) {
  ForwardSplit f = joint_forward(params, batch);
  const KernelSpec& kernel = frozen_kernel ? *frozen_kernel : cfg.kernel;
  const double ce = softmax_cross_entropy(f.source_logits, batch.source_labels).value;
  const double mmd = mmd_value(f.source_embedding, f.target_embedding, kernel, cfg.estimator);
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ContractError("sdal: lambda must lie in [0, 1]");
  return {cfg.lambda * ce + (1.0 - cfg.lambda) * mmd, ce, mmd, cfg.lambda};
}

MomentumSgd::MomentumSgd(const ModelParams& params, double momentum, double weight_decay)
    : velocity_(ParamGrads::zeros_like(params)), momentum_(momentum), weight_decay_(weight_decay) {}

void MomentumSgd::step(ModelParams& params, const ParamGrads& grads, double lr) {
  if (!grads.congruent_with(params)) throw ContractError("optimizer: gradients do not match parameters");
  // Pair each parameter tensor with its gradient and velocity in the same order.
  std::vector<std::span<const double>> g;
  for_each_tensor(params, grads, [&](auto, auto gs) { g.push_back(gs); });
  std::size_t idx = 0;
  for_each_tensor(params, velocity_, [&](std::span<double> theta, std::span<double> v) {
    const auto gi = g[idx++];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double step = gi[i] + weight_decay_ * theta[i];
      v[i] = momentum_ * v[i] + step;
      theta[i] -= lr * v[i];
    }
  });
}

TrainResult train(const DomainDataset& source, const DomainDataset& target, const TrainConfig& cfg,
                  const DomainDataset* evaluation_set, const TrainHooks& hooks) {
  cfg.validate();
  if (!source.has_labels()) throw ContractError("train: source domain must be labelled");
  if (source.dim() != target.dim()) throw ContractError("train: source and target feature widths differ");
  const std::uint32_t classes = *source.num_classes();
  if (classes < 2) throw ContractError("train: need at least two classes");

  TrainResult result{build_model(source.dim(), cfg.bottleneck, classes, cfg.seed), {}};
  MomentumSgd optimizer(result.params, cfg.momentum, cfg.weight_decay);

  const std::size_t per_epoch =
      paired_batch_indices(source.size(), target.size(), cfg.batch_size, cfg.seed, 0).size();
  if (per_epoch == 0) throw ContractError("train: datasets too small for a single batch pair");
  const std::size_t total_steps = per_epoch * cfg.epochs;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first_record = result.metrics.size();
    for (const BatchPair& batch : paired_batches(source, target, cfg.batch_size, cfg.seed, epoch)) {
      const double lr = lr_at(step, total_steps, cfg);
      StepResult r = sdal_step(result.params, batch, cfg);
      if (!std::isfinite(r.loss.total)) {
        throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step) + " (epoch " +
                                  std::to_string(epoch) + ")",
                              static_cast<long>(step));
      }
      update_running_stats(result.params, r.trace);
      optimizer.step(result.params, r.grads, lr);
      result.metrics.push_back(
          {epoch, step, lr, r.loss.total, r.loss.ce, r.loss.mmd, r.source_accuracy, std::nullopt});
      ++step;
    }
    if (evaluation_set && result.metrics.size() > first_record) {
      result.metrics.back().target_accuracy = evaluate(result.params, *evaluation_set);
    }
    if (hooks.on_epoch_end) {
      hooks.on_epoch_end(epoch, result.params,
                         std::span<const MetricsRecord>(result.metrics).subspan(first_record));
    }
  }
  return result;
}

std::vector<std::uint32_t> predict(const ModelParams& params, const Matrix& features) {
  constexpr std::size_t kChunk = 1024;
  std::vector<std::uint32_t> out;
  out.reserve(features.rows());
  for (std::size_t start = 0; start < features.rows(); start += kChunk) {
    const std::size_t len = std::min(kChunk, features.rows() - start);
    Matrix chunk(len, features.cols());
    std::copy_n(features.data() + start * features.cols(), chunk.size(), chunk.data());
    const ForwardTrace t = forward(params, chunk, NormMode::kRunning);
    for (std::size_t i = 0; i < len; ++i) out.push_back(argmax(t.logits.row(i)));
  }
  return out;
}

double evaluate(const ModelParams& params, const DomainDataset& ds) {
  if (!ds.has_labels()) throw ContractError("evaluate: dataset '" + ds.domain_tag() + "' has no labels");
  const auto& labels = ds.labels();
  const auto predicted = predict(params, ds.features());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

GradCheckReport grad_check(const ModelParams& params, const BatchPair& batch, const TrainConfig& cfg,
                           double epsilon) {
  ForwardSplit base = joint_forward(params, batch);
  const KernelSpec frozen = freeze_bandwidths(cfg.kernel, base.source_embedding, base.target_embedding);
  const StepResult analytic = sdal_step(params, batch, cfg, &frozen);

  auto same_masks = [&](const ForwardTrace& t) {
    for (std::size_t k = 0; k < t.pre_activations.size(); ++k) {
      const auto a = t.pre_activations[k].values();
      const auto b = base.trace.pre_activations[k].values();
      for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] > 0.0) != (b[i] > 0.0)) return false;
      }
    }
    return true;
  };

  GradCheckReport report;
  ModelParams probe = params;
  auto check_tensor = [&](std::span<double> theta, std::span<const double> grad) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + epsilon;
      const double plus = sdal_loss(probe, batch, cfg, &frozen).total;
      const bool plus_ok = same_masks(joint_forward(probe, batch).trace);
      theta[i] = saved - epsilon;
      const double minus = sdal_loss(probe, batch, cfg, &frozen).total;
      const bool minus_ok = same_masks(joint_forward(probe, batch).trace);
      theta[i] = saved;
      if (!plus_ok || !minus_ok) {
        ++report.skipped_near_kink;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double denom = std::max({std::abs(grad[i]), std::abs(numeric), kGradCheckFloor});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(grad[i] - numeric) / denom);
      ++report.checked;
    }
  };
  for_each_tensor(probe, analytic.grads, check_tensor);
  return report;
}

}  // namespace euda
