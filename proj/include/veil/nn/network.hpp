#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil::nn {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  bool zero_init = false;
  std::size_t size() const { return shape_size(shape); }
};

// Activations recorded by a forward pass for the matching backward pass.
struct Tape {
  std::vector<TensorD> values;
};

// A differentiable function with a flat parameter vector. Networks hold no
// parameter state; the same instance can be evaluated concurrently with
// different parameter vectors.
class Network {
 public:
  virtual ~Network() = default;

  virtual std::string name() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual TensorD forward(std::span<const double> params, const TensorD& x,
                          Tape* tape) const = 0;
  // Accumulates dL/dparams into `grad` and returns dL/dx.
  virtual TensorD backward(std::span<const double> params, const Tape& tape,
                           const TensorD& grad_out, std::span<double> grad) const = 0;

  const std::vector<ParamSpec>& params() const { return specs_; }
  std::size_t num_params() const { return total_; }

  // He-normal weights, zero biases and zero-init arrays; one RNG stream per
  // parameter array.
  void initialize(std::span<double> params, std::uint64_t seed) const;

 protected:
  std::size_t add_param(std::string name, Shape shape, bool zero_init = false);

 private:
  std::vector<ParamSpec> specs_;
  std::size_t total_ = 0;
};

// Two-scale convolutional encoder-decoder with a concatenating skip
// connection and an input residual; the output projection starts at zero so
// a fresh model is the identity map. Maps H x W x C to H x W x C; rank-4
// input is treated as a stack of independent slices.
class EncoderDecoder2d final : public Network {
 public:
  EncoderDecoder2d(std::size_t channels, std::size_t width);
  std::string name() const override { return "encdec2d"; }
  Shape output_shape(const Shape& input) const override { return input; }
  TensorD forward(std::span<const double> params, const TensorD& x,
                  Tape* tape) const override;
  TensorD backward(std::span<const double> params, const Tape& tape,
                   const TensorD& grad_out, std::span<double> grad) const override;

 private:
  TensorD forward_slice(std::span<const double> p, const TensorD& x, Tape* tape) const;
  TensorD backward_slice(std::span<const double> p, const TensorD* saved,
                         const TensorD& gy, std::span<double> grad) const;
  std::size_t channels_, width_;
  std::size_t enc_w_, enc_b_, mid_w_, mid_b_, dec_w_, dec_b_, out_w_, out_b_;
};

// Per-frame image classifier: three conv blocks, global average pooling and
// a linear head. Inputs are centred on 0.5. H x W x C -> logits[classes].
class FrameClassifier final : public Network {
 public:
  FrameClassifier(std::size_t channels, std::size_t width, std::size_t classes);
  std::string name() const override { return "framecnn"; }
  Shape output_shape(const Shape&) const override { return {classes_}; }
  TensorD forward(std::span<const double> params, const TensorD& x,
                  Tape* tape) const override;
  TensorD backward(std::span<const double> params, const Tape& tape,
                   const TensorD& grad_out, std::span<double> grad) const override;

 private:
  std::size_t channels_, width_, classes_;
  std::size_t c1_w_, c1_b_, c2_w_, c2_b_, c3_w_, c3_b_, fc_w_, fc_b_;
};

// Clip-level 3-D convolutional classifier; inputs centred on 0.5.
// T x H x W x C -> logits[classes].
class ClipClassifier final : public Network {
 public:
  ClipClassifier(std::size_t channels, std::size_t width, std::size_t classes);
  std::string name() const override { return "clipcnn3d"; }
  Shape output_shape(const Shape&) const override { return {classes_}; }
  TensorD forward(std::span<const double> params, const TensorD& x,
                  Tape* tape) const override;
  TensorD backward(std::span<const double> params, const Tape& tape,
                   const TensorD& grad_out, std::span<double> grad) const override;

 private:
  std::size_t channels_, width_, classes_;
  std::size_t c1_w_, c1_b_, c2_w_, c2_b_, fc_w_, fc_b_;
};

}  // namespace veil::nn
