#pragma once

// Test-side reference models and metric formulas, written independently of
// the library implementations they check.

#include <cmath>
#include <limits>
#include <memory>

#include "veil/datagen.hpp"
#include "veil/models.hpp"

namespace veil::testing {

// Parameter-free classifier: logits are negated squared distances to fixed
// templates, so it recovers the label of any input equal to a template.
class TemplateMatcher final : public nn::Network {
 public:
  explicit TemplateMatcher(std::vector<TensorF> templates) : templates_(std::move(templates)) {}
  std::string name() const override { return "template_matcher"; }
  Shape output_shape(const Shape&) const override { return {templates_.size()}; }
  TensorD forward(std::span<const double>, const TensorD& x, nn::Tape*) const override {
    TensorD out({templates_.size()});
    for (std::size_t k = 0; k < templates_.size(); ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = x[i] - templates_[k][i];
        d += e * e;
      }
      out[k] = -d;
    }
    return out;
  }
  TensorD backward(std::span<const double>, const nn::Tape&, const TensorD&,
                   std::span<double>) const override {
    throw std::logic_error("template matcher is not differentiable");
  }

 private:
  std::vector<TensorF> templates_;
};

// Always prefers class 0.
class ConstantClassifier final : public nn::Network {
 public:
  explicit ConstantClassifier(std::size_t classes) : classes_(classes) {}
  std::string name() const override { return "constant"; }
  Shape output_shape(const Shape&) const override { return {classes_}; }
  TensorD forward(std::span<const double>, const TensorD&, nn::Tape*) const override {
    TensorD out({classes_}, 0.0);
    out[0] = 1.0;
    return out;
  }
  TensorD backward(std::span<const double>, const nn::Tape&, const TensorD&,
                   std::span<double>) const override {
    throw std::logic_error("constant classifier is not differentiable");
  }

 private:
  std::size_t classes_;
};

inline ModelHandle frozen_handle(std::shared_ptr<const nn::Network> net, ShapeSpec spec) {
  std::string id = net->name();
  ModelHandle m(Role::kClassifier, std::move(id), std::move(spec), 0, std::move(net));
  m.freeze();
  return m;
}

// Identity oracle for synthetic data generated with zero expression amplitude
// and no noise: every frame equals its identity base.
inline std::vector<TensorF> identity_templates(const SynthesisSpec& spec) {
  std::vector<TensorF> bases;
  for (int i = 0; i < spec.num_identities; ++i) {
    TensorF b = identity_base(spec, i);
    for (float& v : b.values()) v = std::clamp(v, 0.0f, 1.0f);
    bases.push_back(std::move(b));
  }
  return bases;
}

inline ModelHandle identity_oracle(const SynthesisSpec& spec) {
  auto bases = identity_templates(spec);
  const auto H = static_cast<std::size_t>(spec.height);
  const auto W = static_cast<std::size_t>(spec.width);
  const auto C = static_cast<std::size_t>(spec.channels);
  return frozen_handle(std::make_shared<TemplateMatcher>(std::move(bases)),
                       {{H, W, C}, spec.num_identities, 1});
}

inline ModelHandle constant_validator(int classes, Shape frame_shape) {
  return frozen_handle(std::make_shared<ConstantClassifier>(static_cast<std::size_t>(classes)),
                       {std::move(frame_shape), classes, 1});
}

// Direct evaluation of 10 log10(MAX^2 / MSE) with MAX = 1.
inline double reference_psnr(double mse) {
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

}  // namespace veil::testing
