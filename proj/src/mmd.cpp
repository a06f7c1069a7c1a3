#include "euda/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "euda/error.hpp"
#include "euda/simd/kernels.hpp"

namespace euda {
namespace {

// Evaluates k and the scalar weight of its gradient for one kernel choice.
// For RBF, grad_a k(a, b) = -(a - b) * weight(a, b); for linear, grad_a k = b.
class KernelEval {
 public:
  KernelEval(const KernelSpec& spec, std::vector<double> sigmas)
      : linear_(spec.family == KernelFamily::kLinear), table_(simd::active()) {
    for (double s : sigmas) {
      coeff_.push_back(-1.0 / (2.0 * s * s));
      inv_sq_.push_back(1.0 / (s * s));
    }
  }

  bool linear() const { return linear_; }

  double value(std::span<const double> a, std::span<const double> b) const {
    if (linear_) return table_.dot(a.data(), b.data(), a.size());
    const double d2 = table_.squared_distance(a.data(), b.data(), a.size());
    double k = 0.0;
    for (double c : coeff_) k += std::exp(c * d2);
    return k;
  }

  double rbf_weight(std::span<const double> a, std::span<const double> b) const {
    const double d2 = table_.squared_distance(a.data(), b.data(), a.size());
    double w = 0.0;
    for (std::size_t s = 0; s < coeff_.size(); ++s) w += std::exp(coeff_[s] * d2) * inv_sq_[s];
    return w;
  }

 private:
  bool linear_;
  const simd::KernelTable& table_;
  std::vector<double> coeff_;
  std::vector<double> inv_sq_;
};

void check_inputs(const Matrix& zs, const Matrix& zt, std::size_t min_rows) {
  if (zs.cols() != zt.cols()) throw ContractError("mmd: source and target widths differ");
  if (zs.rows() < min_rows || zt.rows() < min_rows) {
    throw ContractError("mmd: each sample needs at least " + std::to_string(min_rows) + " rows");
  }
  if (!zs.all_finite() || !zt.all_finite()) throw ContractError("mmd: non-finite input");
}

// Sum of k over all ordered pairs, optionally skipping i == j.
double within_sum(const Matrix& z, const KernelEval& k, bool include_diagonal) {
  double off = 0.0;
  double diag = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (include_diagonal) diag += k.value(z.row(i), z.row(i));
    for (std::size_t j = i + 1; j < z.rows(); ++j) off += k.value(z.row(i), z.row(j));
  }
  return 2.0 * off + diag;
}

// Orders the two samples independently of argument order, so the cross sum
// below is accumulated in the same sequence for (A, B) and (B, A).
bool canonical_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
}

double cross_sum(const Matrix& zs, const Matrix& zt, const KernelEval& k) {
  const bool swap = canonical_less(zt, zs);
  const Matrix& first = swap ? zt : zs;
  const Matrix& second = swap ? zs : zt;
  double acc = 0.0;
  for (std::size_t i = 0; i < first.rows(); ++i) {
    for (std::size_t j = 0; j < second.rows(); ++j) acc += k.value(first.row(i), second.row(j));
  }
  return acc;
}

std::vector<double> sigmas_for(const KernelSpec& kernel, const Matrix& zs, const Matrix& zt) {
  kernel.validate();
  return resolve_bandwidths(kernel, zs, zt);
}

double estimate(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel, Estimator estimator) {
  const KernelEval k(kernel, sigmas_for(kernel, zs, zt));
  const double ns = static_cast<double>(zs.rows());
  const double nt = static_cast<double>(zt.rows());
  const bool biased = estimator == Estimator::kBiased;
  const double ss = within_sum(zs, k, biased) / (biased ? ns * ns : ns * (ns - 1.0));
  const double tt = within_sum(zt, k, biased) / (biased ? nt * nt : nt * (nt - 1.0));
  return ss + tt - 2.0 * cross_sum(zs, zt, k) / (ns * nt);
}

// Adds to `out` the gradient wrt every row of `self` of
//   scale * sum_{i, j} k(self_i, other_j)
// where, when `same` is set, other == self and diagonal terms are optionally
// dropped. Uses d/da k(a, b) for the first argument only; callers handle the
// factor 2 for symmetric within-sample sums.
void accumulate_grad(const Matrix& self, const Matrix& other, const KernelEval& k, double scale, bool skip_diagonal,
                     Matrix& out) {
  const auto& table = simd::active();
  const std::size_t z = self.cols();
  std::vector<double> diff(z);
  for (std::size_t a = 0; a < self.rows(); ++a) {
    auto ga = out.row(a);
    const auto xa = self.row(a);
    for (std::size_t j = 0; j < other.rows(); ++j) {
      if (skip_diagonal && j == a) continue;
      const auto xj = other.row(j);
      if (k.linear()) {
        table.axpy(scale, xj.data(), ga.data(), z);
      } else {
        const double w = k.rbf_weight(xa, xj);
        for (std::size_t c = 0; c < z; ++c) diff[c] = xa[c] - xj[c];
        table.axpy(-scale * w, diff.data(), ga.data(), z);
      }
    }
  }
}

}  // namespace

void KernelSpec::validate() const {
  if (family == KernelFamily::kLinear) return;
  if (bandwidth_mode == BandwidthMode::kExplicit) {
    if (bandwidths.empty()) throw ConfigError("kernel: rbf needs at least one bandwidth");
    for (double s : bandwidths) {
      if (!(s > 0) || !std::isfinite(s)) throw ConfigError("kernel: bandwidths must be positive");
    }
  } else {
    if (multipliers.empty()) throw ConfigError("kernel: rbf needs at least one median multiplier");
    for (double m : multipliers) {
      if (!(m > 0) || !std::isfinite(m)) throw ConfigError("kernel: median multipliers must be positive");
    }
  }
}

double median_heuristic(const Matrix& zs, const Matrix& zt) {
  if (zs.cols() != zt.cols()) throw ContractError("median_heuristic: widths differ");
  const std::size_t n = zs.rows() + zt.rows();
  if (n < 2) throw ContractError("median_heuristic: need at least two points");
  auto point = [&](std::size_t i) { return i < zs.rows() ? zs.row(i) : zt.row(i - zs.rows()); };
  const auto& table = simd::active();
  std::vector<double> d2;
  d2.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = point(i);
    for (std::size_t j = i + 1; j < n; ++j) d2.push_back(table.squared_distance(a.data(), point(j).data(), a.size()));
  }
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  double median = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  return median > 0.0 ? median : 1.0;
}

std::vector<double> resolve_bandwidths(const KernelSpec& kernel, const Matrix& zs, const Matrix& zt) {
  if (kernel.family == KernelFamily::kLinear) return {};
  if (kernel.bandwidth_mode == BandwidthMode::kExplicit) return kernel.bandwidths;
  const double h = median_heuristic(zs, zt);
  std::vector<double> sigmas;
  for (double m : kernel.multipliers) sigmas.push_back(std::sqrt(m * h));
  return sigmas;
}

KernelSpec freeze_bandwidths(const KernelSpec& kernel, const Matrix& zs, const Matrix& zt) {
  if (kernel.family == KernelFamily::kLinear) return kernel;
  return KernelSpec::rbf(resolve_bandwidths(kernel, zs, zt));
}

namespace detail {
double mmd2_biased_unclamped(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel) {
  check_inputs(zs, zt, 1);
  return estimate(zs, zt, kernel, Estimator::kBiased);
}
}  // namespace detail

double mmd2_biased(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel) {
  return std::max(0.0, detail::mmd2_biased_unclamped(zs, zt, kernel));
}

double mmd2_unbiased(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel) {
  check_inputs(zs, zt, 2);
  return estimate(zs, zt, kernel, Estimator::kUnbiased);
}

MmdGradient mmd2_grad(const Matrix& zs, const Matrix& zt, const KernelSpec& kernel, Estimator estimator) {
  const bool biased = estimator == Estimator::kBiased;
  check_inputs(zs, zt, biased ? 1 : 2);
  const KernelSpec frozen = [&] {
    kernel.validate();
    return freeze_bandwidths(kernel, zs, zt);
  }();
  const KernelEval k(frozen, frozen.bandwidths);
  const double ns = static_cast<double>(zs.rows());
  const double nt = static_cast<double>(zt.rows());
  const double ss_norm = biased ? ns * ns : ns * (ns - 1.0);
  const double tt_norm = biased ? nt * nt : nt * (nt - 1.0);

  MmdGradient g{Matrix(zs.rows(), zs.cols()), Matrix(zt.rows(), zt.cols()), 0.0};
  accumulate_grad(zs, zs, k, 2.0 / ss_norm, !biased, g.d_source);
  accumulate_grad(zs, zt, k, -2.0 / (ns * nt), false, g.d_source);
  accumulate_grad(zt, zt, k, 2.0 / tt_norm, !biased, g.d_target);
  accumulate_grad(zt, zs, k, -2.0 / (ns * nt), false, g.d_target);

  g.value = estimate(zs, zt, frozen, estimator);
  if (biased) g.value = std::max(0.0, g.value);
  return g;
}

}  // namespace euda
