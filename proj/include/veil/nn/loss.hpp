#pragma once

#include <vector>

#include "veil/tensor.hpp"

namespace veil::nn {

struct LossGrad {
  double loss = 0.0;
  TensorD grad;  // dloss/dinput, same shape as the input
};

std::vector<double> softmax(const TensorD& logits);
int argmax(const TensorD& logits);

// -log softmax(logits)[label]
LossGrad cross_entropy(const TensorD& logits, int label);
// Cross-entropy against the uniform distribution: -(1/K) sum_k log p_k.
LossGrad uniform_cross_entropy(const TensorD& logits);
// Mean absolute error; the subgradient at zero residual is 0.
LossGrad l1_loss(const TensorD& output, const TensorD& target);
LossGrad mse_loss(const TensorD& output, const TensorD& target);

}  // namespace veil::nn
