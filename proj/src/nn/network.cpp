#include "veil/nn/network.hpp"

#include <cmath>

#include "veil/nn/layers.hpp"
#include "veil/rng.hpp"

namespace veil::nn {
namespace {

ConvWeights conv_at(std::span<const double> p, const ParamSpec& w, const ParamSpec& b) {
  const std::size_t rank = w.shape.size();
  return {p.subspan(w.offset, w.size()), p.subspan(b.offset, b.size()), w.shape[0],
          w.shape[rank - 2], w.shape[rank - 1]};
}

ConvGrads grads_at(std::span<double> g, const ParamSpec& w, const ParamSpec& b) {
  return {g.subspan(w.offset, w.size()), g.subspan(b.offset, b.size())};
}

LinearWeights linear_at(std::span<const double> p, const ParamSpec& w, const ParamSpec& b) {
  return {p.subspan(w.offset, w.size()), p.subspan(b.offset, b.size()), w.shape[0],
          w.shape[1]};
}

void add_into(TensorD& a, const TensorD& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Classifiers see inputs centred on mid gray.
constexpr double kInputOffset = 0.5;

TensorD centered(const TensorD& x) {
  TensorD out = x;
  for (double& v : out.values()) v -= kInputOffset;
  return out;
}

void check_params(std::span<const double> p, std::size_t n) {
  if (p.size() != n) {
    throw ShapeError("parameter vector has " + std::to_string(p.size()) +
                     " entries, network needs " + std::to_string(n));
  }
}

}  // namespace

std::size_t Network::add_param(std::string name, Shape shape, bool zero_init) {
  ParamSpec spec{std::move(name), std::move(shape), total_, zero_init};
  total_ += spec.size();
  specs_.push_back(std::move(spec));
  return specs_.size() - 1;
}

void Network::initialize(std::span<double> params, std::uint64_t seed) const {
  check_params(params, total_);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    auto block = params.subspan(s.offset, s.size());
    if (s.zero_init || s.name.ends_with(".bias")) {
      std::fill(block.begin(), block.end(), 0.0);
      continue;
    }
    const std::size_t fan_in = s.size() / s.shape.back();
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Rng rng(seed, Stream::kInit, i);
    for (double& v : block) v = stddev * rng.normal();
  }
}

// ---------------------------------------------------------------------------

EncoderDecoder2d::EncoderDecoder2d(std::size_t channels, std::size_t width)
    : channels_(channels), width_(width) {
  const std::size_t C = channels, w = width;
  enc_w_ = add_param("enc.weight", {3, 3, C, w});
  enc_b_ = add_param("enc.bias", {w});
  mid_w_ = add_param("mid.weight", {3, 3, w, 2 * w});
  mid_b_ = add_param("mid.bias", {2 * w});
  dec_w_ = add_param("dec.weight", {3, 3, 3 * w, w});
  dec_b_ = add_param("dec.bias", {w});
  out_w_ = add_param("out.weight", {1, 1, w, C}, true);
  out_b_ = add_param("out.bias", {C});
}

namespace {
constexpr std::size_t kEncDecSaved = 9;
}

TensorD EncoderDecoder2d::forward_slice(std::span<const double> p, const TensorD& x,
                                        Tape* tape) const {
  if (x.rank() != 3 || x.dim(2) != channels_ || x.dim(0) < 2 || x.dim(1) < 2) {
    throw ShapeError("encdec2d: expected H x W x " + std::to_string(channels_) +
                     " with H, W >= 2, got " + shape_string(x.shape()));
  }
  const auto& s = params();
  TensorD a1 = conv2d(x, conv_at(p, s[enc_w_], s[enc_b_]));
  TensorD h1 = leaky_relu(a1);
  TensorD d = avg_pool(h1, false);
  TensorD a2 = conv2d(d, conv_at(p, s[mid_w_], s[mid_b_]));
  TensorD h2 = leaky_relu(a2);
  TensorD u = upsample2(h2, x.dim(0), x.dim(1));
  TensorD cat = concat_channels(u, h1);
  TensorD a3 = conv2d(cat, conv_at(p, s[dec_w_], s[dec_b_]));
  TensorD h3 = leaky_relu(a3);
  TensorD y = conv2d(h3, conv_at(p, s[out_w_], s[out_b_]));
  add_into(y, x);
  if (tape) {
    tape->values.push_back(x);
    for (TensorD* t : {&a1, &h1, &d, &a2, &h2, &cat, &a3, &h3}) {
      tape->values.push_back(std::move(*t));
    }
  }
  return y;
}

TensorD EncoderDecoder2d::backward_slice(std::span<const double> p, const TensorD* saved,
                                         const TensorD& gy, std::span<double> grad) const {
  const auto& s = params();
  const TensorD& x = saved[0];
  const TensorD& a1 = saved[1];
  const TensorD& h1 = saved[2];
  const TensorD& d = saved[3];
  const TensorD& a2 = saved[4];
  const TensorD& h2 = saved[5];
  const TensorD& cat = saved[6];
  const TensorD& a3 = saved[7];
  const TensorD& h3 = saved[8];
  TensorD gh3 = conv2d_backward(h3, conv_at(p, s[out_w_], s[out_b_]), gy,
                                grads_at(grad, s[out_w_], s[out_b_]));
  TensorD ga3 = leaky_relu_backward(a3, gh3);
  TensorD gcat = conv2d_backward(cat, conv_at(p, s[dec_w_], s[dec_b_]), ga3,
                                 grads_at(grad, s[dec_w_], s[dec_b_]));
  auto [gu, gh1_skip] = concat_channels_backward(gcat, 2 * width_);
  TensorD gh2 = upsample2_backward(h2.shape(), gu);
  TensorD ga2 = leaky_relu_backward(a2, gh2);
  TensorD gd = conv2d_backward(d, conv_at(p, s[mid_w_], s[mid_b_]), ga2,
                               grads_at(grad, s[mid_w_], s[mid_b_]));
  TensorD gh1 = avg_pool_backward(h1.shape(), gd, false);
  add_into(gh1, gh1_skip);
  TensorD ga1 = leaky_relu_backward(a1, gh1);
  TensorD gx = conv2d_backward(x, conv_at(p, s[enc_w_], s[enc_b_]), ga1,
                               grads_at(grad, s[enc_w_], s[enc_b_]));
  add_into(gx, gy);
  return gx;
}

TensorD EncoderDecoder2d::forward(std::span<const double> p, const TensorD& x,
                                  Tape* tape) const {
  check_params(p, num_params());
  if (x.rank() == 3) return forward_slice(p, x, tape);
  if (x.rank() != 4) {
    throw ShapeError("encdec2d: expected rank 3 or 4 input, got " + shape_string(x.shape()));
  }
  TensorD y(x.shape());
  for (std::size_t i = 0; i < x.dim(0); ++i) y.set_slice(i, forward_slice(p, x.slice(i), tape));
  return y;
}

TensorD EncoderDecoder2d::backward(std::span<const double> p, const Tape& tape,
                                   const TensorD& gy, std::span<double> grad) const {
  check_params(p, num_params());
  check_params(grad, num_params());
  if (gy.rank() == 3) return backward_slice(p, tape.values.data(), gy, grad);
  TensorD gx(gy.shape());
  for (std::size_t i = 0; i < gy.dim(0); ++i) {
    gx.set_slice(i, backward_slice(p, tape.values.data() + i * kEncDecSaved, gy.slice(i), grad));
  }
  return gx;
}

// ---------------------------------------------------------------------------

FrameClassifier::FrameClassifier(std::size_t channels, std::size_t width, std::size_t classes)
    : channels_(channels), width_(width), classes_(classes) {
  const std::size_t C = channels, w = width;
  c1_w_ = add_param("conv1.weight", {3, 3, C, w});
  c1_b_ = add_param("conv1.bias", {w});
  c2_w_ = add_param("conv2.weight", {3, 3, w, 2 * w});
  c2_b_ = add_param("conv2.bias", {2 * w});
  c3_w_ = add_param("conv3.weight", {3, 3, 2 * w, 2 * w});
  c3_b_ = add_param("conv3.bias", {2 * w});
  fc_w_ = add_param("fc.weight", {2 * w, classes});
  fc_b_ = add_param("fc.bias", {classes});
}

TensorD FrameClassifier::forward(std::span<const double> p, const TensorD& x,
                                 Tape* tape) const {
  check_params(p, num_params());
  if (x.rank() != 3 || x.dim(2) != channels_ || x.dim(0) < 4 || x.dim(1) < 4) {
    throw ShapeError("framecnn: expected H x W x " + std::to_string(channels_) +
                     " with H, W >= 4, got " + shape_string(x.shape()));
  }
  const auto& s = params();
  const TensorD xc = centered(x);
  TensorD a1 = conv2d(xc, conv_at(p, s[c1_w_], s[c1_b_]));
  TensorD h1 = leaky_relu(a1);
  TensorD p1 = avg_pool(h1, false);
  TensorD a2 = conv2d(p1, conv_at(p, s[c2_w_], s[c2_b_]));
  TensorD h2 = leaky_relu(a2);
  TensorD p2 = avg_pool(h2, false);
  TensorD a3 = conv2d(p2, conv_at(p, s[c3_w_], s[c3_b_]));
  TensorD h3 = leaky_relu(a3);
  TensorD g = global_avg_pool(h3);
  TensorD y = linear(g, linear_at(p, s[fc_w_], s[fc_b_]));
  if (tape) {
    tape->values.push_back(xc);
    for (TensorD* t : {&a1, &h1, &p1, &a2, &h2, &p2, &a3, &h3, &g}) {
      tape->values.push_back(std::move(*t));
    }
  }
  return y;
}

TensorD FrameClassifier::backward(std::span<const double> p, const Tape& tape,
                                  const TensorD& gy, std::span<double> grad) const {
  check_params(grad, num_params());
  const auto& s = params();
  const auto& v = tape.values;
  const TensorD &x = v[0], &a1 = v[1], &h1 = v[2], &p1 = v[3], &a2 = v[4], &h2 = v[5],
                &p2 = v[6], &a3 = v[7], &h3 = v[8], &g = v[9];
  TensorD gg = linear_backward(g, linear_at(p, s[fc_w_], s[fc_b_]), gy,
                               grads_at(grad, s[fc_w_], s[fc_b_]));
  TensorD gh3 = global_avg_pool_backward(h3.shape(), gg);
  TensorD ga3 = leaky_relu_backward(a3, gh3);
  TensorD gp2 = conv2d_backward(p2, conv_at(p, s[c3_w_], s[c3_b_]), ga3,
                                grads_at(grad, s[c3_w_], s[c3_b_]));
  TensorD gh2 = avg_pool_backward(h2.shape(), gp2, false);
  TensorD ga2 = leaky_relu_backward(a2, gh2);
  TensorD gp1 = conv2d_backward(p1, conv_at(p, s[c2_w_], s[c2_b_]), ga2,
                                grads_at(grad, s[c2_w_], s[c2_b_]));
  TensorD gh1 = avg_pool_backward(h1.shape(), gp1, false);
  TensorD ga1 = leaky_relu_backward(a1, gh1);
  return conv2d_backward(x, conv_at(p, s[c1_w_], s[c1_b_]), ga1,
                         grads_at(grad, s[c1_w_], s[c1_b_]));
}

// ---------------------------------------------------------------------------

ClipClassifier::ClipClassifier(std::size_t channels, std::size_t width, std::size_t classes)
    : channels_(channels), width_(width), classes_(classes) {
  const std::size_t C = channels, w = width;
  c1_w_ = add_param("conv1.weight", {3, 3, 3, C, w});
  c1_b_ = add_param("conv1.bias", {w});
  c2_w_ = add_param("conv2.weight", {3, 3, 3, w, 2 * w});
  c2_b_ = add_param("conv2.bias", {2 * w});
  fc_w_ = add_param("fc.weight", {2 * w, classes});
  fc_b_ = add_param("fc.bias", {classes});
}

TensorD ClipClassifier::forward(std::span<const double> p, const TensorD& x,
                                Tape* tape) const {
  check_params(p, num_params());
  if (x.rank() != 4 || x.dim(3) != channels_ || x.dim(0) < 2 || x.dim(1) < 2 ||
      x.dim(2) < 2) {
    throw ShapeError("clipcnn3d: expected T x H x W x " + std::to_string(channels_) +
                     " with T, H, W >= 2, got " + shape_string(x.shape()));
  }
  const auto& s = params();
  const TensorD xc = centered(x);
  TensorD a1 = conv3d(xc, conv_at(p, s[c1_w_], s[c1_b_]));
  TensorD h1 = leaky_relu(a1);
  TensorD p1 = avg_pool(h1, true);
  TensorD a2 = conv3d(p1, conv_at(p, s[c2_w_], s[c2_b_]));
  TensorD h2 = leaky_relu(a2);
  TensorD g = global_avg_pool(h2);
  TensorD y = linear(g, linear_at(p, s[fc_w_], s[fc_b_]));
  if (tape) {
    tape->values.push_back(xc);
    for (TensorD* t : {&a1, &h1, &p1, &a2, &h2, &g}) tape->values.push_back(std::move(*t));
  }
  return y;
}

TensorD ClipClassifier::backward(std::span<const double> p, const Tape& tape,
                                 const TensorD& gy, std::span<double> grad) const {
  check_params(grad, num_params());
  const auto& s = params();
  const auto& v = tape.values;
  const TensorD &x = v[0], &a1 = v[1], &h1 = v[2], &p1 = v[3], &a2 = v[4], &h2 = v[5],
                &g = v[6];
  TensorD gg = linear_backward(g, linear_at(p, s[fc_w_], s[fc_b_]), gy,
                               grads_at(grad, s[fc_w_], s[fc_b_]));
  TensorD gh2 = global_avg_pool_backward(h2.shape(), gg);
  TensorD ga2 = leaky_relu_backward(a2, gh2);
  TensorD gp1 = conv3d_backward(p1, conv_at(p, s[c2_w_], s[c2_b_]), ga2,
                                grads_at(grad, s[c2_w_], s[c2_b_]));
  TensorD gh1 = avg_pool_backward(h1.shape(), gp1, true);
  TensorD ga1 = leaky_relu_backward(a1, gh1);
  return conv3d_backward(x, conv_at(p, s[c1_w_], s[c1_b_]), ga1,
                         grads_at(grad, s[c1_w_], s[c1_b_]));
}

}  // namespace veil::nn
