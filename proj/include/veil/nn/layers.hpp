#pragma once

#include <span>

#include "veil/tensor.hpp"

// Single-sample layer kernels in channel-last layout. Every forward has a
// matching backward that accumulates (+=) parameter gradients and returns
// the gradient with respect to the layer input.
namespace veil::nn {

struct ConvWeights {
  std::span<const double> weight;  // [k, k, in, out] or [k, k, k, in, out]
  std::span<const double> bias;    // [out]
  std::size_t kernel;
  std::size_t in_channels;
  std::size_t out_channels;
};

struct ConvGrads {
  std::span<double> weight;
  std::span<double> bias;
};

// Zero-padded "same" convolution, stride 1, odd kernel. x: H x W x Cin.
TensorD conv2d(const TensorD& x, const ConvWeights& w);
TensorD conv2d_backward(const TensorD& x, const ConvWeights& w,
                        const TensorD& grad_out, const ConvGrads& g);

// Same for T x H x W x Cin volumes with a cubic kernel.
TensorD conv3d(const TensorD& x, const ConvWeights& w);
TensorD conv3d_backward(const TensorD& x, const ConvWeights& w,
                        const TensorD& grad_out, const ConvGrads& g);

inline constexpr double kLeakySlope = 0.1;

TensorD leaky_relu(const TensorD& x);
TensorD leaky_relu_backward(const TensorD& x, const TensorD& grad_out);

// 2x2 average pooling over H x W (or 2x2x2 over T x H x W when `volumetric`),
// floor semantics: trailing odd rows/cols are dropped.
TensorD avg_pool(const TensorD& x, bool volumetric);
TensorD avg_pool_backward(const Shape& input_shape, const TensorD& grad_out,
                          bool volumetric);

// Nearest-neighbour 2x upsampling of H x W x C to exactly `target_h` x
// `target_w` (source index = min(i / 2, h - 1)).
TensorD upsample2(const TensorD& x, std::size_t target_h, std::size_t target_w);
TensorD upsample2_backward(const Shape& input_shape, const TensorD& grad_out);

// Channel concatenation of two H x W x C tensors.
TensorD concat_channels(const TensorD& a, const TensorD& b);
std::pair<TensorD, TensorD> concat_channels_backward(const TensorD& grad_out,
                                                     std::size_t channels_a);

// Mean over all leading axes, leaving the channel vector.
TensorD global_avg_pool(const TensorD& x);
TensorD global_avg_pool_backward(const Shape& input_shape, const TensorD& grad_out);

struct LinearWeights {
  std::span<const double> weight;  // [in, out]
  std::span<const double> bias;    // [out]
  std::size_t in, out;
};

TensorD linear(const TensorD& x, const LinearWeights& w);
TensorD linear_backward(const TensorD& x, const LinearWeights& w,
                        const TensorD& grad_out, const ConvGrads& g);

}  // namespace veil::nn
