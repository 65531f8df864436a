#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"

namespace veil {
namespace {

using namespace veil::testing;

void check_gradients(ModelHandle model, const TensorD& x, Objective obj, int label) {
  const auto err = gradient_error(std::move(model), x, obj, label);
  EXPECT_LT(err.params, 1e-4) << "parameter gradient";
  EXPECT_LT(err.input, 1e-4) << "input gradient";
}

TEST(Gradients, EncoderDecoderL1) {
  auto m = make_reference_model(Role::kEnhancer, {{6, 6, 1}, 0, 2}, 3);
  ASSERT_LE(m.num_params(), 1000u);
  check_gradients(m, random_tensor({6, 6, 1}, 1), Objective::kL1, 0);
}

TEST(Gradients, EncoderDecoderOnCoefficientStack) {
  auto m = make_reference_model(Role::kCompensator, {{5, 5, 2}, 0, 2}, 4);
  check_gradients(m, random_tensor({2, 5, 5, 2}, 2, -1.0, 1.0), Objective::kL1, 0);
}

TEST(Gradients, FrameClassifierAscentAndDescent) {
  auto m = make_reference_model(Role::kClassifier, {{8, 8, 1}, 3, 3}, 5);
  ASSERT_LE(m.num_params(), 1000u);
  const TensorD x = random_tensor({8, 8, 1}, 3);
  check_gradients(m, x, Objective::kAscentCe, 1);
  check_gradients(m, x, Objective::kDescentCe, 2);
}

TEST(Gradients, ClipClassifierDescent) {
  auto m = make_reference_model(Role::kUtility, {{4, 6, 6, 1}, 3, 2}, 6);
  ASSERT_LE(m.num_params(), 1000u);
  check_gradients(m, random_tensor({4, 6, 6, 1}, 4), Objective::kDescentCe, 0);
}

TEST(Gradients, ClipClassifierOddExtents) {
  auto m = make_reference_model(Role::kUtility, {{5, 7, 5, 2}, 2, 2}, 7);
  check_gradients(m, random_tensor({5, 7, 5, 2}, 5), Objective::kAscentCe, 1);
}

TEST(Gradients, EncoderDecoderThroughFrozenClassifier) {
  // The enhancer-training chain: enhancer -> frozen controller -> negated CE.
  auto enh = make_reference_model(Role::kEnhancer, {{8, 8, 1}, 0, 2}, 8);
  {
    Rng rng(98);
    std::vector<double> p(enh.num_params());
    for (double& v : p) v = rng.normal() * 0.5;
    enh.set_parameters(std::move(p));
  }
  auto clf = freeze(make_reference_model(Role::kClassifier, {{8, 8, 1}, 3, 2}, 9));
  const TensorD x = random_tensor({8, 8, 1}, 6);
  nn::Tape te, tc;
  const TensorD z = enh.forward(x, te);
  const auto ce = nn::cross_entropy(clf.forward(z, tc), 1);
  TensorD dlogits = ce.grad;
  for (double& v : dlogits.values()) v = -v;
  std::vector<double> grad(enh.num_params(), 0.0);
  enh.backward(te, clf.backward_input(tc, dlogits), grad);
  std::vector<double> p(enh.parameters().begin(), enh.parameters().end());
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); i += 7) {
    ModelHandle m = enh;
    auto q = p;
    q[i] += h;
    m.set_parameters(q);
    const double up = -nn::cross_entropy(clf.forward(m.forward(x)), 1).loss;
    q[i] -= 2 * h;
    m.set_parameters(q);
    const double down = -nn::cross_entropy(clf.forward(m.forward(x)), 1).loss;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({1e-3, std::abs(fd), std::abs(grad[i])}));
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace veil
