#include "veil/frequency.hpp"

#include <array>
#include <bit>
#include <cmath>

#include "veil/error.hpp"

namespace veil {
namespace {

struct FilterBank {
  int length;
  std::array<double, 4> dec_lo, dec_hi, rec_lo, rec_hi;
};

FilterBank make_bank(WaveletFamily family) {
  FilterBank b{};
  if (family == WaveletFamily::kHaar) {
    const double r = 1.0 / std::sqrt(2.0);
    b.length = 2;
    b.dec_lo = {r, r, 0, 0};
  } else {
    const double s3 = std::sqrt(3.0);
    const double d = 4.0 * std::sqrt(2.0);
    b.length = 4;
    b.dec_lo = {(1 - s3) / d, (3 - s3) / d, (3 + s3) / d, (1 + s3) / d};
  }
  const int L = b.length;
  for (int j = 0; j < L; ++j) {
    b.dec_hi[j] = ((j % 2 == 0) ? -1.0 : 1.0) * b.dec_lo[L - 1 - j];
  }
  for (int j = 0; j < L; ++j) {
    b.rec_lo[j] = b.dec_lo[L - 1 - j];
    b.rec_hi[j] = b.dec_hi[L - 1 - j];
  }
  return b;
}

std::size_t shrink(std::size_t n, Boundary boundary, int filter_length) {
  return boundary == Boundary::kPeriodic ? n / 2 : (n + filter_length - 1) / 2;
}

int filter_length(WaveletFamily f) { return f == WaveletFamily::kHaar ? 2 : 4; }

long reflect(long idx, long n) {
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx - 1;
    if (idx >= n) idx = 2 * n - 1 - idx;
  }
  return idx;
}

long wrap(long idx, long n) { return ((idx % n) + n) % n; }

// Iterates the 1-D lines of `shape` along `axis`, calling fn(base, stride)
// with the flat offset of the line's first element in a tensor whose extent
// along `axis` is `extent`.
struct LineLayout {
  std::size_t outer = 1, inner = 1;
  LineLayout(const Shape& shape, std::size_t axis) {
    for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
    for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  }
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> analysis(const Tensor<T>& x, std::size_t axis,
                                         Boundary boundary, const FilterBank& fb) {
  const long n = static_cast<long>(x.dim(axis));
  const long m = static_cast<long>(shrink(x.dim(axis), boundary, fb.length));
  Shape out_shape = x.shape();
  out_shape[axis] = static_cast<std::size_t>(m);
  Tensor<T> lo(out_shape), hi(out_shape);
  const LineLayout lay(x.shape(), axis);
  const long L = fb.length;
  for (std::size_t o = 0; o < lay.outer; ++o) {
    for (std::size_t i = 0; i < lay.inner; ++i) {
      const T* src = x.data() + o * n * lay.inner + i;
      T* dlo = lo.data() + o * m * lay.inner + i;
      T* dhi = hi.data() + o * m * lay.inner + i;
      for (long k = 0; k < m; ++k) {
        double slo = 0.0, shi = 0.0;
        for (long j = 0; j < L; ++j) {
          const long idx = boundary == Boundary::kPeriodic
                               ? wrap(2 * k + L / 2 - j, n)
                               : reflect(2 * k + 1 - j, n);
          const double v = src[idx * lay.inner];
          slo += fb.dec_lo[j] * v;
          shi += fb.dec_hi[j] * v;
        }
        dlo[k * lay.inner] = static_cast<T>(slo);
        dhi[k * lay.inner] = static_cast<T>(shi);
      }
    }
  }
  return {std::move(lo), std::move(hi)};
}

template <typename T>
Tensor<T> synthesis(const Tensor<T>& lo, const Tensor<T>& hi, std::size_t axis,
                    std::size_t target, Boundary boundary, const FilterBank& fb) {
  const long m = static_cast<long>(lo.dim(axis));
  const long n = static_cast<long>(target);
  Shape out_shape = lo.shape();
  out_shape[axis] = target;
  Tensor<T> out(out_shape);
  const LineLayout lay(lo.shape(), axis);
  const long L = fb.length;
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (std::size_t o = 0; o < lay.outer; ++o) {
    for (std::size_t i = 0; i < lay.inner; ++i) {
      const T* a = lo.data() + o * m * lay.inner + i;
      const T* d = hi.data() + o * m * lay.inner + i;
      T* dst = out.data() + o * n * lay.inner + i;
      std::fill(acc.begin(), acc.end(), 0.0);
      if (boundary == Boundary::kPeriodic) {
        // Transpose of the orthonormal circular analysis.
        for (long k = 0; k < m; ++k) {
          const double ak = a[k * lay.inner], dk = d[k * lay.inner];
          for (long j = 0; j < L; ++j) {
            acc[wrap(2 * k + L / 2 - j, n)] += fb.dec_lo[j] * ak + fb.dec_hi[j] * dk;
          }
        }
      } else {
        for (long t = 0; t < n; ++t) {
          double s = 0.0;
          for (long j = 0; j < L; ++j) {
            const long twice_k = t + L - 2 - j;
            if (twice_k < 0 || twice_k % 2 != 0) continue;
            const long k = twice_k / 2;
            if (k >= m) continue;
            s += fb.rec_lo[j] * a[k * lay.inner] + fb.rec_hi[j] * d[k * lay.inner];
          }
          acc[t] = s;
        }
      }
      for (long t = 0; t < n; ++t) dst[t * lay.inner] = static_cast<T>(acc[t]);
    }
  }
  return out;
}

// Transpose of `synthesis` as a map (lo, hi) -> out.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> synthesis_adjoint(const Tensor<T>& g,
                                                  std::size_t axis, Boundary boundary,
                                                  const FilterBank& fb) {
  if (boundary == Boundary::kPeriodic) return analysis(g, axis, boundary, fb);
  const long n = static_cast<long>(g.dim(axis));
  const long m = static_cast<long>(shrink(g.dim(axis), boundary, fb.length));
  Shape out_shape = g.shape();
  out_shape[axis] = static_cast<std::size_t>(m);
  Tensor<T> glo(out_shape), ghi(out_shape);
  const LineLayout lay(g.shape(), axis);
  const long L = fb.length;
  for (std::size_t o = 0; o < lay.outer; ++o) {
    for (std::size_t i = 0; i < lay.inner; ++i) {
      const T* src = g.data() + o * n * lay.inner + i;
      T* dlo = glo.data() + o * m * lay.inner + i;
      T* dhi = ghi.data() + o * m * lay.inner + i;
      for (long k = 0; k < m; ++k) {
        double slo = 0.0, shi = 0.0;
        for (long j = 0; j < L; ++j) {
          const long t = 2 * k + j - L + 2;
          if (t < 0 || t >= n) continue;
          slo += fb.rec_lo[j] * src[t * lay.inner];
          shi += fb.rec_hi[j] * src[t * lay.inner];
        }
        dlo[k * lay.inner] = static_cast<T>(slo);
        dhi[k * lay.inner] = static_cast<T>(shi);
      }
    }
  }
  return {std::move(glo), std::move(ghi)};
}

// Shared driver for decompose and reconstruct_adjoint: both split each band
// along every axis, level by level, with `split` producing (low, high).
template <typename T, typename Split>
FrequencyPair<T> forward_tree(const Tensor<T>& clip, const TransformConfig& config,
                              const Shape& original_shape, Split split) {
  const auto axes = config.axes();
  FrequencyPair<T> pair;
  pair.config = config;
  pair.original_shape = original_shape;
  Tensor<T> current = clip;
  for (int level = 0; level < config.levels; ++level) {
    std::vector<Tensor<T>> bands;
    bands.push_back(std::move(current));
    for (std::size_t k = 0; k < axes.size(); ++k) {
      std::vector<Tensor<T>> next(bands.size() * 2);
      for (std::size_t b = 0; b < bands.size(); ++b) {
        auto [lo, hi] = split(bands[b], axes[k]);
        next[b] = std::move(lo);
        next[b | (std::size_t{1} << k)] = std::move(hi);
      }
      bands = std::move(next);
    }
    for (std::size_t b = 1; b < bands.size(); ++b) pair.high.push_back(std::move(bands[b]));
    current = std::move(bands[0]);
  }
  pair.low = std::move(current);
  return pair;
}

std::vector<Shape> level_input_shapes(const Shape& clip_shape,
                                      const TransformConfig& config) {
  const int L = filter_length(config.family);
  std::vector<Shape> shapes{clip_shape};
  for (int level = 1; level < config.levels; ++level) {
    Shape s = shapes.back();
    for (auto a : config.axes()) s[a] = shrink(s[a], config.boundary, L);
    shapes.push_back(s);
  }
  return shapes;
}

}  // namespace

std::string to_string(WaveletFamily f) {
  return f == WaveletFamily::kHaar ? "haar" : "db2";
}
std::string to_string(TransformAxis a) {
  switch (a) {
    case TransformAxis::kTemporal: return "temporal";
    case TransformAxis::kSpatial: return "spatial";
    case TransformAxis::kSpatiotemporal: return "spatiotemporal";
  }
  return "?";
}
std::string to_string(Boundary b) {
  return b == Boundary::kPeriodic ? "periodic" : "symmetric";
}
WaveletFamily parse_family(const std::string& s) {
  if (s == "haar") return WaveletFamily::kHaar;
  if (s == "db2") return WaveletFamily::kDb2;
  throw ValidationError("unknown wavelet family '" + s + "' (haar|db2)");
}
TransformAxis parse_axis(const std::string& s) {
  if (s == "temporal") return TransformAxis::kTemporal;
  if (s == "spatial") return TransformAxis::kSpatial;
  if (s == "spatiotemporal") return TransformAxis::kSpatiotemporal;
  throw ValidationError("unknown transform axis '" + s +
                        "' (temporal|spatial|spatiotemporal)");
}
Boundary parse_boundary(const std::string& s) {
  if (s == "periodic") return Boundary::kPeriodic;
  if (s == "symmetric") return Boundary::kSymmetric;
  throw ValidationError("unknown boundary '" + s + "' (symmetric|periodic)");
}

std::vector<std::size_t> TransformConfig::axes() const {
  switch (axis) {
    case TransformAxis::kTemporal: return {0};
    case TransformAxis::kSpatial: return {1, 2};
    case TransformAxis::kSpatiotemporal: return {0, 1, 2};
  }
  return {};
}

int TransformConfig::max_levels(const Shape& clip_shape) const {
  if (clip_shape.size() != 4) return 0;
  const int L = filter_length(family);
  int best = 1 << 30;
  for (auto a : axes()) {
    const std::size_t extent = clip_shape[a];
    const int log_cap = extent >= 1 ? std::bit_width(extent) - 1 : 0;
    int ok = 0;
    std::size_t n = extent;
    while (ok < log_cap) {
      if (n < 2 || (boundary == Boundary::kPeriodic && n % 2 != 0)) break;
      n = shrink(n, boundary, L);
      ++ok;
    }
    best = std::min(best, ok);
  }
  return best;
}

void TransformConfig::validate(const Shape& clip_shape) const {
  if (clip_shape.size() != 4) {
    throw ValidationError("transform expects a T x H x W x C array, got " +
                          shape_string(clip_shape));
  }
  if (levels < 1) throw ValidationError("transform levels must be >= 1");
  const int max = max_levels(clip_shape);
  if (levels > max) {
    throw ValidationError(
        "transform " + to_string(family) + "/" + to_string(axis) + "/" +
        to_string(boundary) + " with " + std::to_string(levels) +
        " levels is not admissible for shape " + shape_string(clip_shape) +
        "; max admissible levels = " + std::to_string(max) +
        (boundary == Boundary::kPeriodic ? " (periodic needs even extents)" : ""));
  }
}

std::vector<Shape> coefficient_shapes(const Shape& clip_shape,
                                      const TransformConfig& config) {
  config.validate(clip_shape);
  const int L = filter_length(config.family);
  const auto axes = config.axes();
  const std::size_t per_level = (std::size_t{1} << axes.size()) - 1;
  std::vector<Shape> details;
  Shape s = clip_shape;
  for (int level = 0; level < config.levels; ++level) {
    std::vector<Shape> bands{s};
    for (std::size_t k = 0; k < axes.size(); ++k) {
      std::vector<Shape> next(bands.size() * 2);
      for (std::size_t b = 0; b < bands.size(); ++b) {
        Shape lo = bands[b];
        lo[axes[k]] = shrink(lo[axes[k]], config.boundary, L);
        next[b] = lo;
        next[b | (std::size_t{1} << k)] = lo;
      }
      bands = std::move(next);
    }
    for (std::size_t b = 1; b <= per_level; ++b) details.push_back(bands[b]);
    s = bands[0];
  }
  std::vector<Shape> out{s};
  out.insert(out.end(), details.begin(), details.end());
  return out;
}

template <typename T>
FrequencyPair<T> decompose(const Tensor<T>& clip, const TransformConfig& config) {
  config.validate(clip.shape());
  const FilterBank fb = make_bank(config.family);
  return forward_tree(clip, config, clip.shape(),
                      [&](const Tensor<T>& x, std::size_t axis) {
                        return analysis(x, axis, config.boundary, fb);
                      });
}

template <typename T>
Tensor<T> reconstruct(const FrequencyPair<T>& pair) {
  const auto& config = pair.config;
  const auto expected = coefficient_shapes(pair.original_shape, config);
  if (pair.low.shape() != expected[0] || pair.high.size() + 1 != expected.size()) {
    throw ShapeError("reconstruct: coefficient layout does not match config for " +
                     shape_string(pair.original_shape));
  }
  for (std::size_t i = 0; i < pair.high.size(); ++i) {
    if (pair.high[i].shape() != expected[i + 1]) {
      throw ShapeError("reconstruct: detail array " + std::to_string(i) + " is " +
                       shape_string(pair.high[i].shape()) + ", expected " +
                       shape_string(expected[i + 1]));
    }
  }
  const FilterBank fb = make_bank(config.family);
  const auto axes = config.axes();
  const std::size_t per_level = (std::size_t{1} << axes.size()) - 1;
  const auto inputs = level_input_shapes(pair.original_shape, config);
  Tensor<T> current = pair.low;
  for (int level = config.levels - 1; level >= 0; --level) {
    std::vector<Tensor<T>> bands;
    bands.push_back(std::move(current));
    for (std::size_t b = 1; b <= per_level; ++b) {
      bands.push_back(pair.high[level * per_level + (b - 1)]);
    }
    for (std::size_t k = axes.size(); k-- > 0;) {
      std::vector<Tensor<T>> merged(bands.size() / 2);
      for (std::size_t b = 0; b < merged.size(); ++b) {
        merged[b] = synthesis(bands[b], bands[b | (std::size_t{1} << k)], axes[k],
                              inputs[level][axes[k]], config.boundary, fb);
      }
      bands = std::move(merged);
    }
    current = std::move(bands[0]);
  }
  return current;
}

template <typename T>
FrequencyPair<T> reconstruct_adjoint(const Tensor<T>& grad_clip,
                                     const TransformConfig& config,
                                     const Shape& original_shape) {
  if (grad_clip.shape() != original_shape) {
    throw ShapeError("reconstruct_adjoint: gradient shape " +
                     shape_string(grad_clip.shape()) + " differs from " +
                     shape_string(original_shape));
  }
  config.validate(original_shape);
  const FilterBank fb = make_bank(config.family);
  return forward_tree(grad_clip, config, original_shape,
                      [&](const Tensor<T>& g, std::size_t axis) {
                        return synthesis_adjoint(g, axis, config.boundary, fb);
                      });
}

template <typename T>
BandEnergy energy_split(const FrequencyPair<T>& pair) {
  BandEnergy e;
  for (T v : pair.low.values()) e.low += static_cast<double>(v) * v;
  for (const auto& h : pair.high) {
    for (T v : h.values()) e.high += static_cast<double>(v) * v;
  }
  return e;
}

template FrequencyPair<float> decompose(const TensorF&, const TransformConfig&);
template FrequencyPair<double> decompose(const TensorD&, const TransformConfig&);
template TensorF reconstruct(const FrequencyPair<float>&);
template TensorD reconstruct(const FrequencyPair<double>&);
template FrequencyPair<float> reconstruct_adjoint(const TensorF&, const TransformConfig&,
                                                  const Shape&);
template FrequencyPair<double> reconstruct_adjoint(const TensorD&, const TransformConfig&,
                                                   const Shape&);
template BandEnergy energy_split(const FrequencyPair<float>&);
template BandEnergy energy_split(const FrequencyPair<double>&);

}  // namespace veil
