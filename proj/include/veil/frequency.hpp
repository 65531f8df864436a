#pragma once

#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

enum class WaveletFamily { kHaar, kDb2 };
enum class TransformAxis { kTemporal, kSpatial, kSpatiotemporal };
// kPeriodic is the orthonormal circular transform (N/2 coefficients per
// level). kSymmetric extends each line by half-sample mirroring and keeps
// floor((N + L - 1) / 2) coefficients, which makes odd extents invertible.
enum class Boundary { kSymmetric, kPeriodic };

struct TransformConfig {
  WaveletFamily family = WaveletFamily::kHaar;
  TransformAxis axis = TransformAxis::kTemporal;
  int levels = 1;
  Boundary boundary = Boundary::kPeriodic;

  // Array axes (of T x H x W x C) the transform runs along.
  std::vector<std::size_t> axes() const;
  // Largest admissible level count for a clip of this shape.
  int max_levels(const Shape& clip_shape) const;
  // Throws ValidationError naming the admissible maximum.
  void validate(const Shape& clip_shape) const;

  friend bool operator==(const TransformConfig&, const TransformConfig&) = default;
};

std::string to_string(WaveletFamily f);
std::string to_string(TransformAxis a);
std::string to_string(Boundary b);
WaveletFamily parse_family(const std::string& s);
TransformAxis parse_axis(const std::string& s);
Boundary parse_boundary(const std::string& s);

// Coefficients of one decomposition. `high` holds detail arrays ordered by
// level (finest first) and, within a level, by orientation bitmask over the
// transformed axes (bit k set = high-pass along the k-th axis). With a single
// axis there is one detail array per level.
//
// Coefficient extent along a transformed axis per level:
//   periodic:  n -> n / 2
//   symmetric: n -> floor((n + L - 1) / 2), L = 2 (haar) or 4 (db2)
template <typename T>
struct FrequencyPair {
  Tensor<T> low;
  std::vector<Tensor<T>> high;
  TransformConfig config;
  Shape original_shape;
};

// Coefficient shapes a decomposition of `clip_shape` produces; index 0 is the
// low band, the rest follow FrequencyPair::high order.
std::vector<Shape> coefficient_shapes(const Shape& clip_shape,
                                      const TransformConfig& config);

template <typename T>
FrequencyPair<T> decompose(const Tensor<T>& clip, const TransformConfig& config);

// Inverse of decompose. Coefficients may have been rewritten, only their
// shapes are checked.
template <typename T>
Tensor<T> reconstruct(const FrequencyPair<T>& pair);

// Adjoint (transpose) of reconstruct as a linear map from coefficients to
// clips: given dL/dclip returns dL/dcoefficients. Equals decompose for
// periodic boundaries.
template <typename T>
FrequencyPair<T> reconstruct_adjoint(const Tensor<T>& grad_clip,
                                     const TransformConfig& config,
                                     const Shape& original_shape);

struct BandEnergy {
  double low = 0.0;
  double high = 0.0;
};

template <typename T>
BandEnergy energy_split(const FrequencyPair<T>& pair);

}  // namespace veil
