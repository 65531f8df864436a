#include "veil/training.hpp"

#include <cmath>
#include <numeric>

#include "veil/error.hpp"
#include "veil/nn/loss.hpp"
#include "veil/rng.hpp"

namespace veil {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("optimizer: learning_rate must be > 0");
  }
  if (epochs < 1) throw ValidationError("optimizer: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("optimizer: batch_size must be >= 1");
  if (grad_clip < 0.0) throw ValidationError("optimizer: grad_clip must be >= 0");
}

std::string to_string(OptimizerMethod m) { return m == OptimizerMethod::kSgd ? "sgd" : "adam"; }

OptimizerMethod parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerMethod::kSgd;
  if (s == "adam") return OptimizerMethod::kAdam;
  throw ValidationError("unknown optimizer '" + s + "' (sgd|adam)");
}

Optimizer::Optimizer(const OptimizerConfig& config, std::size_t num_params)
    : config_(config), m_(num_params), v_(num_params) {
  config_.validate();
}

void Optimizer::step(ModelHandle& model, std::span<const double> grad) {
  auto params = model.mutable_parameters();
  if (grad.size() != params.size() || m_.size() != params.size()) {
    throw ShapeError("optimizer step: gradient size mismatch");
  }
  double scale = 1.0;
  if (config_.grad_clip > 0.0) {
    const double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
    if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
  }
  const double lr = config_.learning_rate;
  if (config_.method == OptimizerMethod::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * scale * grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = scale * grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const OptimizerConfig& opt,
                                                    int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opt.seed, Stream::kShuffle, static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  for (std::size_t i = 0; i < n; i += bs) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + bs));
  }
  return batches;
}

TensorD frame_tensor(const VideoClip& clip, std::size_t t) {
  return clip.frames.slice(t).cast<double>();
}

TensorD clip_tensor(const VideoClip& clip) { return clip.frames.cast<double>(); }

TensorF to_float(const TensorD& x) { return x.cast<float>(); }

std::string to_string(FramePolicy p) {
  return p == FramePolicy::kAllFrames ? "all_frames" : "one_random_frame_per_clip";
}

FramePolicy parse_frame_policy(const std::string& s) {
  if (s == "all_frames") return FramePolicy::kAllFrames;
  if (s == "one_random_frame_per_clip") return FramePolicy::kOneRandomFramePerClip;
  throw ValidationError("unknown frame policy '" + s + "'");
}

ClassifierTraining pretrain_classifier(ModelHandle model, const Dataset& dataset,
                                       LabelField field, FramePolicy policy,
                                       const OptimizerConfig& opt, double augment_noise) {
  opt.validate();
  if (augment_noise < 0.0) throw ValidationError("augment_noise must be >= 0");
  if (model.role() != Role::kClassifier) {
    throw ValidationError("pretrain_classifier needs a classifier-role model, got " +
                          to_string(model.role()));
  }
  if (model.num_classes() != dataset.num_classes(field)) {
    throw ValidationError("class-count mismatch: model has " +
                          std::to_string(model.num_classes()) + " classes, dataset has " +
                          std::to_string(dataset.num_classes(field)) + " " +
                          to_string(field) + " labels");
  }
  if (dataset.clips.empty()) throw ValidationError("pretrain_classifier: empty dataset");
  model.train();

  const std::size_t T = dataset.clips.front().num_frames();
  ClassifierTraining out{model, {}, {}};
  ModelHandle& m = out.model;
  Optimizer optimizer(opt, m.num_params());
  std::vector<double> grad(m.num_params());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    // (clip, frame) samples for this epoch.
    std::vector<std::pair<std::size_t, std::size_t>> samples;
    for (std::size_t c = 0; c < dataset.clips.size(); ++c) {
      if (policy == FramePolicy::kAllFrames) {
        for (std::size_t t = 0; t < T; ++t) samples.emplace_back(c, t);
      } else {
        Rng rng(opt.seed, Stream::kFrame,
                static_cast<std::uint64_t>(epoch) * dataset.clips.size() + c);
        samples.emplace_back(c, rng.below(T));
      }
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : epoch_batches(samples.size(), opt, epoch)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t idx : batch) {
        const auto [c, t] = samples[idx];
        const VideoClip& clip = dataset.clips[c];
        TensorD x = frame_tensor(clip, t);
        if (augment_noise > 0.0) {
          Rng noise(opt.seed, Stream::kClipNoise,
                    (static_cast<std::uint64_t>(epoch) * samples.size() + idx));
          for (double& v : x.values()) v += augment_noise * noise.normal();
        }
        nn::Tape tape;
        TensorD logits = m.forward(x, tape);
        auto ce = nn::cross_entropy(logits, clip.label(field));
        loss_sum += ce.loss;
        correct += nn::argmax(logits) == clip.label(field);
        m.backward(tape, ce.grad, grad);
      }
      for (double& g : grad) g /= static_cast<double>(batch.size());
      optimizer.step(m, grad);
    }
    out.loss_trace.push_back(loss_sum / samples.size());
    out.accuracy_trace.push_back(static_cast<double>(correct) / samples.size());
    if (!std::isfinite(out.loss_trace.back())) {
      throw NumericalError("pretrain_classifier: non-finite loss at epoch " +
                           std::to_string(epoch));
    }
  }
  return out;
}

ReconstructionTraining train_reconstruction(ModelHandle model, std::span<const TensorD> inputs,
                                            std::span<const TensorD> targets,
                                            const OptimizerConfig& opt,
                                            ReconstructionLoss loss, double threshold) {
  opt.validate();
  if (model.role() == Role::kClassifier || model.role() == Role::kUtility) {
    throw ValidationError("reconstruction training needs an image-to-image model, got " +
                          to_string(model.role()));
  }
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw ValidationError("reconstruction training: need equally many non-zero inputs and targets");
  }
  const std::size_t C = model.shape_spec().input.back();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape().back() != C || inputs[i].shape() != targets[i].shape()) {
      throw ShapeError("reconstruction training: array " + std::to_string(i) + " shape " +
                       shape_string(inputs[i].shape()) + " incompatible with model input " +
                       shape_string(model.shape_spec().input));
    }
  }
  model.train();
  ReconstructionTraining out{model, {}, 0.0, true};
  ModelHandle& m = out.model;
  Optimizer optimizer(opt, m.num_params());
  std::vector<double> grad(m.num_params());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum = 0.0;
    for (const auto& batch : epoch_batches(inputs.size(), opt, epoch)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i : batch) {
        nn::Tape tape;
        TensorD y = m.forward(inputs[i], tape);
        auto l = loss == ReconstructionLoss::kL1 ? nn::l1_loss(y, targets[i])
                                                 : nn::mse_loss(y, targets[i]);
        sum += l.loss;
        m.backward(tape, l.grad, grad);
      }
      for (double& g : grad) g /= static_cast<double>(batch.size());
      optimizer.step(m, grad);
    }
    out.loss_trace.push_back(sum / inputs.size());
    if (!std::isfinite(out.loss_trace.back())) {
      throw NumericalError("reconstruction training: non-finite loss at epoch " +
                           std::to_string(epoch));
    }
  }
  out.final_loss = out.loss_trace.back();
  out.converged = out.final_loss < threshold;
  return out;
}

ReconstructionTraining pretrain_enhancer(ModelHandle model, std::span<const TensorD> arrays,
                                         const OptimizerConfig& opt, double threshold) {
  return train_reconstruction(std::move(model), arrays, arrays, opt, ReconstructionLoss::kL1,
                              threshold);
}

double mean_abs_error(const ModelHandle& model, std::span<const TensorD> inputs,
                      std::span<const TensorD> targets) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    TensorD y = model.forward(inputs[i]);
    for (std::size_t k = 0; k < y.size(); ++k) sum += std::abs(y[k] - targets[i][k]);
    n += y.size();
  }
  return n ? sum / n : 0.0;
}

}  // namespace veil
