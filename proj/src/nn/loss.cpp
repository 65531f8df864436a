#include "veil/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "veil/error.hpp"

namespace veil::nn {
namespace {

void same_shape(const TensorD& a, const TensorD& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": output " + shape_string(a.shape()) +
                     " vs target " + shape_string(b.shape()));
  }
}

}  // namespace

std::vector<double> softmax(const TensorD& logits) {
  const double peak = *std::max_element(logits.values().begin(), logits.values().end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) z += (p[k] = std::exp(logits[k] - peak));
  for (double& v : p) v /= z;
  return p;
}

int argmax(const TensorD& logits) {
  return static_cast<int>(std::max_element(logits.values().begin(), logits.values().end()) -
                          logits.values().begin());
}

LossGrad cross_entropy(const TensorD& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ValidationError("cross_entropy: label " + std::to_string(label) +
                          " outside [0," + std::to_string(logits.size()) + ")");
  }
  const double peak = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - peak);
  const double log_z = peak + std::log(z);
  LossGrad out{log_z - logits[label], TensorD(logits.shape())};
  for (std::size_t k = 0; k < logits.size(); ++k) out.grad[k] = std::exp(logits[k] - log_z);
  out.grad[label] -= 1.0;
  return out;
}

LossGrad uniform_cross_entropy(const TensorD& logits) {
  const double peak = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - peak);
  const double log_z = peak + std::log(z);
  const double k = static_cast<double>(logits.size());
  LossGrad out{0.0, TensorD(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.loss += (log_z - logits[i]) / k;
    out.grad[i] = std::exp(logits[i] - log_z) - 1.0 / k;
  }
  return out;
}

LossGrad l1_loss(const TensorD& output, const TensorD& target) {
  same_shape(output, target, "l1_loss");
  const double n = static_cast<double>(output.size());
  LossGrad out{0.0, TensorD(output.shape())};
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double r = output[i] - target[i];
    out.loss += std::abs(r);
    out.grad[i] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / n;
  }
  out.loss /= n;
  return out;
}

LossGrad mse_loss(const TensorD& output, const TensorD& target) {
  same_shape(output, target, "mse_loss");
  const double n = static_cast<double>(output.size());
  LossGrad out{0.0, TensorD(output.shape())};
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double r = output[i] - target[i];
    out.loss += r * r;
    out.grad[i] = 2.0 * r / n;
  }
  out.loss /= n;
  return out;
}

}  // namespace veil::nn
