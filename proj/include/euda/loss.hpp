#pragma once

#include <cstdint>
#include <span>

#include "euda/matrix.hpp"

namespace euda {

struct CrossEntropy {
  double value = 0.0;
  Matrix grad_logits;  // (softmax - onehot) / b
};

// Batch-mean softmax cross-entropy, evaluated with log-sum-exp.
CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const std::uint32_t> labels);

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double mmd = 0.0;
  double lambda = 0.0;
};

struct SeededGradients {
  LossBreakdown loss;
  Matrix grad_logits;
  Matrix grad_source_embedding;
  Matrix grad_target_embedding;
};

// total = lambda * ce + (1 - lambda) * mmd, with the incoming gradients scaled
// by the same weights. Throws ContractError unless 0 <= lambda <= 1.
SeededGradients sdal_combine(double ce, const Matrix& grad_logits, double mmd, const Matrix& grad_source_embedding,
                             const Matrix& grad_target_embedding, double lambda);

}  // namespace euda
