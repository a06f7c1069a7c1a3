#pragma once

#include <vector>

#include "euda/matrix.hpp"

namespace euda {

enum class KernelFamily { kRbfMulti, kLinear };
enum class BandwidthMode { kExplicit, kMedianTimes };
enum class Estimator { kBiased, kUnbiased };

// Kernel used by the discrepancy loss. For the RBF family the kernel is a sum
// of Gaussians, one per bandwidth sigma:
//   k(a, b) = sum_s exp(-|a - b|^2 / (2 sigma_s^2)).
// In kMedianTimes mode the squared bandwidths are sigma_s^2 = m_s * h, where h
// is the median heuristic of the batch and m_s the multipliers.
struct KernelSpec {
  KernelFamily family = KernelFamily::kRbfMulti;
  BandwidthMode bandwidth_mode = BandwidthMode::kMedianTimes;
  std::vector<double> bandwidths;  // explicit sigmas
  std::vector<double> multipliers = {0.25, 0.5, 1.0, 2.0, 4.0};

  static KernelSpec linear() { return {KernelFamily::kLinear, BandwidthMode::kExplicit, {}, {}}; }
  static KernelSpec rbf(std::vector<double> sigmas) {
    return {KernelFamily::kRbfMulti, BandwidthMode::kExplicit, std::move(sigmas), {}};
  }
  static KernelSpec rbf_median(std::vector<double> multipliers = {0.25, 0.5, 1.0, 2.0, 4.0}) {
    return {KernelFamily::kRbfMulti, BandwidthMode::kMedianTimes, {}, std::move(multipliers)};
  }

  // Throws ConfigError.
  void validate() const;
};

// Median of the squared Euclidean distances over all distinct unordered pairs
// of the pooled sample; 1.0 if that median is zero.
double median_heuristic(const Matrix& zs, const Matrix& zt);

// Concrete sigmas for this pair of samples (empty for the linear kernel).
std::vector<double> resolve_bandwidths(const KernelSpec& kernel, const Matrix& zs, const Matrix& zt);

// A KernelSpec whose bandwidths are already resolved to explicit sigmas.
KernelSpec freeze_bandwidths(const KernelSpec& kernel, const Matrix& zs, const Matrix& zt);

double mmd2_biased(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel);
double mmd2_unbiased(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel);

struct MmdGradient {
  Matrix d_source;
  Matrix d_target;
  double value = 0.0;
};

// Analytic gradient of the chosen estimator. Bandwidths are treated as
// constants even when they come from the median heuristic.
MmdGradient mmd2_grad(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel,
                      Estimator estimator = Estimator::kBiased);

namespace detail {
// Biased estimate before clamping at zero.
double mmd2_biased_unclamped(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel);
}

}  // namespace euda
