#pragma once

// Finite-difference gradient checking shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>

#include "veil/models.hpp"
#include "veil/nn/loss.hpp"
#include "veil/rng.hpp"

namespace veil::testing {

inline TensorD random_tensor(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  TensorD x(shape);
  Rng rng(seed);
  for (double& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

enum class Objective { kAscentCe, kDescentCe, kL1 };

inline double objective_loss(const TensorD& y, Objective obj, int label, const TensorD& target,
                      TensorD* grad) {
  nn::LossGrad lg;
  double sign = 1.0;
  switch (obj) {
    case Objective::kAscentCe:
      lg = nn::cross_entropy(y, label);
      sign = -1.0;
      break;
    case Objective::kDescentCe:
      lg = nn::cross_entropy(y, label);
      break;
    case Objective::kL1:
      lg = nn::l1_loss(y, target);
      break;
  }
  if (grad) {
    *grad = lg.grad;
    for (double& g : grad->values()) g *= sign;
  }
  return sign * lg.loss;
}

struct GradientError {
  double params = 0.0;
  double input = 0.0;
};

// Worst relative error of analytic parameter and input gradients against
// central differences, scaled by the larger magnitude.
inline GradientError gradient_error(ModelHandle model, const TensorD& x, Objective obj, int label) {
  // Random parameters so no block (e.g. a zero-initialized projection)
  // hides the gradient of the layers behind it.
  {
    Rng rng(99);
    std::vector<double> p(model.num_params());
    for (double& v : p) v = rng.normal() * 0.5;
    model.set_parameters(std::move(p));
  }
  const TensorD y0 = model.forward(x);
  // An L1 target well away from the output keeps residuals off the kink.
  TensorD target = y0;
  for (double& v : target.values()) v += 0.5;

  nn::Tape tape;
  const TensorD y = model.forward(x, tape);
  TensorD gy;
  objective_loss(y, obj, label, target, &gy);
  std::vector<double> grad(model.num_params(), 0.0);
  const TensorD gx = model.backward(tape, gy, grad);

  auto loss_at = [&](const ModelHandle& m, const TensorD& in) {
    return objective_loss(m.forward(in), obj, label, target, nullptr);
  };
  const double h = 1e-6;
  std::vector<double> params(model.parameters().begin(), model.parameters().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ModelHandle m = model;
    std::vector<double> p = params;
    p[i] += h;
    m.set_parameters(p);
    const double up = loss_at(m, x);
    p[i] -= 2 * h;
    m.set_parameters(p);
    const double down = loss_at(m, x);
    const double fd = (up - down) / (2 * h);
    const double err = std::abs(fd - grad[i]) / std::max({1e-3, std::abs(fd), std::abs(grad[i])});
    worst = std::max(worst, err);
  }
  GradientError out;
  out.params = worst;

  worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    TensorD xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (loss_at(model, xp) - loss_at(model, xm)) / (2 * h);
    const double err = std::abs(fd - gx[i]) / std::max({1e-3, std::abs(fd), std::abs(gx[i])});
    worst = std::max(worst, err);
  }
  out.input = worst;
  return out;
}

}  // namespace veil::testing
