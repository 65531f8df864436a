#include "veil/nn/layers.hpp"

#include <algorithm>

namespace veil::nn {
namespace {

void check_rank(const TensorD& x, std::size_t rank, const char* what) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_string(x.shape()));
  }
}

void check_channels(const TensorD& x, std::size_t channels, const char* what) {
  if (x.shape().back() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got " + shape_string(x.shape()));
  }
}

}  // namespace

TensorD conv2d(const TensorD& x, const ConvWeights& w) {
  check_rank(x, 3, "conv2d");
  check_channels(x, w.in_channels, "conv2d");
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const long K = static_cast<long>(w.kernel), P = K / 2;
  const std::size_t Ci = w.in_channels, Co = w.out_channels;
  TensorD y({x.dim(0), x.dim(1), Co});
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      double* out = y.data() + (r * W + c) * Co;
      std::copy(w.bias.begin(), w.bias.end(), out);
      for (long kr = 0; kr < K; ++kr) {
        const long sr = r + kr - P;
        if (sr < 0 || sr >= H) continue;
        for (long kc = 0; kc < K; ++kc) {
          const long sc = c + kc - P;
          if (sc < 0 || sc >= W) continue;
          const double* in = x.data() + (sr * W + sc) * Ci;
          const double* wk = w.weight.data() + (kr * K + kc) * Ci * Co;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double v = in[ci];
            const double* wr = wk + ci * Co;
            for (std::size_t co = 0; co < Co; ++co) out[co] += v * wr[co];
          }
        }
      }
    }
  }
  return y;
}

TensorD conv2d_backward(const TensorD& x, const ConvWeights& w, const TensorD& gy,
                        const ConvGrads& g) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const long K = static_cast<long>(w.kernel), P = K / 2;
  const std::size_t Ci = w.in_channels, Co = w.out_channels;
  TensorD gx(x.shape());
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const double* go = gy.data() + (r * W + c) * Co;
      for (std::size_t co = 0; co < Co; ++co) g.bias[co] += go[co];
      for (long kr = 0; kr < K; ++kr) {
        const long sr = r + kr - P;
        if (sr < 0 || sr >= H) continue;
        for (long kc = 0; kc < K; ++kc) {
          const long sc = c + kc - P;
          if (sc < 0 || sc >= W) continue;
          const std::size_t src = static_cast<std::size_t>((sr * W + sc)) * Ci;
          const double* in = x.data() + src;
          double* gin = gx.data() + src;
          const std::size_t woff = static_cast<std::size_t>(kr * K + kc) * Ci * Co;
          const double* wk = w.weight.data() + woff;
          double* gk = g.weight.data() + woff;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double v = in[ci];
            const double* wr = wk + ci * Co;
            double* gr = gk + ci * Co;
            double acc = 0.0;
            for (std::size_t co = 0; co < Co; ++co) {
              acc += wr[co] * go[co];
              gr[co] += v * go[co];
            }
            gin[ci] += acc;
          }
        }
      }
    }
  }
  return gx;
}

TensorD conv3d(const TensorD& x, const ConvWeights& w) {
  check_rank(x, 4, "conv3d");
  check_channels(x, w.in_channels, "conv3d");
  const long T = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)),
             W = static_cast<long>(x.dim(2));
  const long K = static_cast<long>(w.kernel), P = K / 2;
  const std::size_t Ci = w.in_channels, Co = w.out_channels;
  TensorD y({x.dim(0), x.dim(1), x.dim(2), Co});
  for (long t = 0; t < T; ++t) {
    for (long r = 0; r < H; ++r) {
      for (long c = 0; c < W; ++c) {
        double* out = y.data() + ((t * H + r) * W + c) * Co;
        std::copy(w.bias.begin(), w.bias.end(), out);
        for (long kt = 0; kt < K; ++kt) {
          const long st = t + kt - P;
          if (st < 0 || st >= T) continue;
          for (long kr = 0; kr < K; ++kr) {
            const long sr = r + kr - P;
            if (sr < 0 || sr >= H) continue;
            for (long kc = 0; kc < K; ++kc) {
              const long sc = c + kc - P;
              if (sc < 0 || sc >= W) continue;
              const double* in = x.data() + ((st * H + sr) * W + sc) * Ci;
              const double* wk = w.weight.data() + ((kt * K + kr) * K + kc) * Ci * Co;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double v = in[ci];
                const double* wr = wk + ci * Co;
                for (std::size_t co = 0; co < Co; ++co) out[co] += v * wr[co];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

TensorD conv3d_backward(const TensorD& x, const ConvWeights& w, const TensorD& gy,
                        const ConvGrads& g) {
  const long T = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)),
             W = static_cast<long>(x.dim(2));
  const long K = static_cast<long>(w.kernel), P = K / 2;
  const std::size_t Ci = w.in_channels, Co = w.out_channels;
  TensorD gx(x.shape());
  for (long t = 0; t < T; ++t) {
    for (long r = 0; r < H; ++r) {
      for (long c = 0; c < W; ++c) {
        const double* go = gy.data() + ((t * H + r) * W + c) * Co;
        for (std::size_t co = 0; co < Co; ++co) g.bias[co] += go[co];
        for (long kt = 0; kt < K; ++kt) {
          const long st = t + kt - P;
          if (st < 0 || st >= T) continue;
          for (long kr = 0; kr < K; ++kr) {
            const long sr = r + kr - P;
            if (sr < 0 || sr >= H) continue;
            for (long kc = 0; kc < K; ++kc) {
              const long sc = c + kc - P;
              if (sc < 0 || sc >= W) continue;
              const std::size_t src =
                  static_cast<std::size_t>(((st * H + sr) * W + sc)) * Ci;
              const std::size_t woff =
                  static_cast<std::size_t>((kt * K + kr) * K + kc) * Ci * Co;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double v = x.data()[src + ci];
                const double* wr = w.weight.data() + woff + ci * Co;
                double* gr = g.weight.data() + woff + ci * Co;
                double acc = 0.0;
                for (std::size_t co = 0; co < Co; ++co) {
                  acc += wr[co] * go[co];
                  gr[co] += v * go[co];
                }
                gx.data()[src + ci] += acc;
              }
            }
          }
        }
      }
    }
  }
  return gx;
}

TensorD leaky_relu(const TensorD& x) {
  TensorD y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] > 0.0 ? x[i] : kLeakySlope * x[i];
  }
  return y;
}

TensorD leaky_relu_backward(const TensorD& x, const TensorD& gy) {
  TensorD gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    gx[i] = x[i] > 0.0 ? gy[i] : kLeakySlope * gy[i];
  }
  return gx;
}

TensorD avg_pool(const TensorD& x, bool volumetric) {
  if (!volumetric) {
    check_rank(x, 3, "avg_pool");
    const std::size_t H = x.dim(0) / 2, W = x.dim(1) / 2, C = x.dim(2);
    if (H == 0 || W == 0) throw ShapeError("avg_pool: input too small " + shape_string(x.shape()));
    const std::size_t Win = x.dim(1);
    TensorD y({H, W, C});
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t k = 0; k < C; ++k) {
          double s = 0.0;
          for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc)
              s += x[((2 * r + dr) * Win + 2 * c + dc) * C + k];
          y[(r * W + c) * C + k] = 0.25 * s;
        }
    return y;
  }
  check_rank(x, 4, "avg_pool");
  const std::size_t T = x.dim(0) / 2, H = x.dim(1) / 2, W = x.dim(2) / 2, C = x.dim(3);
  if (T == 0 || H == 0 || W == 0) throw ShapeError("avg_pool: input too small " + shape_string(x.shape()));
  const std::size_t Hin = x.dim(1), Win = x.dim(2);
  TensorD y({T, H, W, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t k = 0; k < C; ++k) {
          double s = 0.0;
          for (std::size_t dt = 0; dt < 2; ++dt)
            for (std::size_t dr = 0; dr < 2; ++dr)
              for (std::size_t dc = 0; dc < 2; ++dc)
                s += x[(((2 * t + dt) * Hin + 2 * r + dr) * Win + 2 * c + dc) * C + k];
          y[((t * H + r) * W + c) * C + k] = 0.125 * s;
        }
  return y;
}

TensorD avg_pool_backward(const Shape& in_shape, const TensorD& gy, bool volumetric) {
  TensorD gx(in_shape);
  if (!volumetric) {
    const std::size_t H = gy.dim(0), W = gy.dim(1), C = gy.dim(2), Win = in_shape[1];
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t k = 0; k < C; ++k) {
          const double g = 0.25 * gy[(r * W + c) * C + k];
          for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc)
              gx[((2 * r + dr) * Win + 2 * c + dc) * C + k] += g;
        }
    return gx;
  }
  const std::size_t T = gy.dim(0), H = gy.dim(1), W = gy.dim(2), C = gy.dim(3);
  const std::size_t Hin = in_shape[1], Win = in_shape[2];
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t k = 0; k < C; ++k) {
          const double g = 0.125 * gy[((t * H + r) * W + c) * C + k];
          for (std::size_t dt = 0; dt < 2; ++dt)
            for (std::size_t dr = 0; dr < 2; ++dr)
              for (std::size_t dc = 0; dc < 2; ++dc)
                gx[(((2 * t + dt) * Hin + 2 * r + dr) * Win + 2 * c + dc) * C + k] += g;
        }
  return gx;
}

TensorD upsample2(const TensorD& x, std::size_t th, std::size_t tw) {
  check_rank(x, 3, "upsample2");
  const std::size_t h = x.dim(0), w = x.dim(1), C = x.dim(2);
  TensorD y({th, tw, C});
  for (std::size_t r = 0; r < th; ++r) {
    const std::size_t sr = std::min(r / 2, h - 1);
    for (std::size_t c = 0; c < tw; ++c) {
      const std::size_t sc = std::min(c / 2, w - 1);
      std::copy_n(x.data() + (sr * w + sc) * C, C, y.data() + (r * tw + c) * C);
    }
  }
  return y;
}

TensorD upsample2_backward(const Shape& in_shape, const TensorD& gy) {
  TensorD gx(in_shape);
  const std::size_t h = in_shape[0], w = in_shape[1], C = in_shape[2];
  const std::size_t th = gy.dim(0), tw = gy.dim(1);
  for (std::size_t r = 0; r < th; ++r) {
    const std::size_t sr = std::min(r / 2, h - 1);
    for (std::size_t c = 0; c < tw; ++c) {
      const std::size_t sc = std::min(c / 2, w - 1);
      const double* g = gy.data() + (r * tw + c) * C;
      double* d = gx.data() + (sr * w + sc) * C;
      for (std::size_t k = 0; k < C; ++k) d[k] += g[k];
    }
  }
  return gx;
}

TensorD concat_channels(const TensorD& a, const TensorD& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0) * a.dim(1), ca = a.dim(2), cb = b.dim(2);
  TensorD y({a.dim(0), a.dim(1), ca + cb});
  for (std::size_t p = 0; p < n; ++p) {
    std::copy_n(a.data() + p * ca, ca, y.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, y.data() + p * (ca + cb) + ca);
  }
  return y;
}

std::pair<TensorD, TensorD> concat_channels_backward(const TensorD& gy, std::size_t ca) {
  const std::size_t n = gy.dim(0) * gy.dim(1), ct = gy.dim(2), cb = ct - ca;
  TensorD ga({gy.dim(0), gy.dim(1), ca}), gb({gy.dim(0), gy.dim(1), cb});
  for (std::size_t p = 0; p < n; ++p) {
    std::copy_n(gy.data() + p * ct, ca, ga.data() + p * ca);
    std::copy_n(gy.data() + p * ct + ca, cb, gb.data() + p * cb);
  }
  return {std::move(ga), std::move(gb)};
}

TensorD global_avg_pool(const TensorD& x) {
  const std::size_t C = x.shape().back();
  const std::size_t n = x.size() / C;
  TensorD y({C});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < C; ++k) y[k] += x[p * C + k];
  for (std::size_t k = 0; k < C; ++k) y[k] /= static_cast<double>(n);
  return y;
}

TensorD global_avg_pool_backward(const Shape& in_shape, const TensorD& gy) {
  TensorD gx(in_shape);
  const std::size_t C = in_shape.back();
  const std::size_t n = gx.size() / C;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < C; ++k) gx[p * C + k] = gy[k] / static_cast<double>(n);
  return gx;
}

TensorD linear(const TensorD& x, const LinearWeights& w) {
  if (x.size() != w.in) {
    throw ShapeError("linear: expected " + std::to_string(w.in) + " inputs, got " +
                     shape_string(x.shape()));
  }
  TensorD y({w.out});
  std::copy(w.bias.begin(), w.bias.end(), y.data());
  for (std::size_t i = 0; i < w.in; ++i) {
    const double v = x[i];
    const double* row = w.weight.data() + i * w.out;
    for (std::size_t o = 0; o < w.out; ++o) y[o] += v * row[o];
  }
  return y;
}

TensorD linear_backward(const TensorD& x, const LinearWeights& w, const TensorD& gy,
                        const ConvGrads& g) {
  TensorD gx(x.shape());
  for (std::size_t o = 0; o < w.out; ++o) g.bias[o] += gy[o];
  for (std::size_t i = 0; i < w.in; ++i) {
    const double* row = w.weight.data() + i * w.out;
    double* grow = g.weight.data() + i * w.out;
    double acc = 0.0;
    for (std::size_t o = 0; o < w.out; ++o) {
      acc += row[o] * gy[o];
      grow[o] += x[i] * gy[o];
    }
    gx[i] = acc;
  }
  return gx;
}

}  // namespace veil::nn
