#include "euda/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "euda/error.hpp"

namespace euda {

CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const std::uint32_t> labels) {
  const std::size_t b = logits.rows();
  const std::size_t c = logits.cols();
  if (b == 0 || c == 0) throw ContractError("cross_entropy: empty logits");
  if (labels.size() != b) throw ContractError("cross_entropy: label count differs from batch size");
  if (!logits.all_finite()) throw ContractError("cross_entropy: non-finite logits");

  CrossEntropy out{0.0, Matrix(b, c)};
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                          std::to_string(c) + " classes");
    }
    const auto row = logits.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - peak);
    const double log_denom = std::log(denom);
    out.value -= row[labels[i]] - peak - log_denom;
    auto grad = out.grad_logits.row(i);
    for (std::size_t k = 0; k < c; ++k) grad[k] = std::exp(row[k] - peak - log_denom) * inv_b;
    grad[labels[i]] -= inv_b;
  }
  out.value *= inv_b;
  return out;
}

SeededGradients sdal_combine(double ce, const Matrix& grad_logits, double mmd, const Matrix& grad_source_embedding,
                             const Matrix& grad_target_embedding, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("sdal: lambda must lie in [0, 1]");
  const double w_mmd = 1.0 - lambda;
  SeededGradients s{{lambda * ce + w_mmd * mmd, ce, mmd, lambda}, grad_logits, grad_source_embedding,
                    grad_target_embedding};
  for (double& v : s.grad_logits.values()) v *= lambda;
  for (double& v : s.grad_source_embedding.values()) v *= w_mmd;
  for (double& v : s.grad_target_embedding.values()) v *= w_mmd;
  return s;
}

}  // namespace euda
