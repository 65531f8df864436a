#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "veil/datagen.hpp"
#include "veil/models.hpp"

namespace veil {

enum class OptimizerMethod { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::kAdam;
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;
  // Global L2 gradient-norm clip per step; 0 disables.
  double grad_clip = 0.0;

  void validate() const;
};

std::string to_string(OptimizerMethod m);
OptimizerMethod parse_optimizer(const std::string& s);

// SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over one model.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::size_t num_params);
  // `grad` is the batch-mean gradient. Throws InvariantViolation for frozen
  // models.
  void step(ModelHandle& model, std::span<const double> grad);

 private:
  OptimizerConfig config_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Index batches for one epoch, shuffled by a stream keyed on (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                    const OptimizerConfig& opt,
                                                    int epoch);

TensorD frame_tensor(const VideoClip& clip, std::size_t t);
TensorD clip_tensor(const VideoClip& clip);
TensorF to_float(const TensorD& x);

enum class FramePolicy { kAllFrames, kOneRandomFramePerClip };
std::string to_string(FramePolicy p);
FramePolicy parse_frame_policy(const std::string& s);

struct ClassifierTraining {
  ModelHandle model;
  std::vector<double> loss_trace;      // epoch-mean cross-entropy
  std::vector<double> accuracy_trace;  // epoch training accuracy
};

// Per-frame cross-entropy training of a classifier-role model. A positive
// `augment_noise` adds seeded Gaussian pixel noise of that deviation to every
// training frame.
ClassifierTraining pretrain_classifier(ModelHandle model, const Dataset& dataset,
                                       LabelField field, FramePolicy policy,
                                       const OptimizerConfig& opt, double augment_noise = 0.0);

enum class ReconstructionLoss { kL1, kMse };

struct ReconstructionTraining {
  ModelHandle model;
  std::vector<double> loss_trace;
  double final_loss = 0.0;
  // False when final_loss did not fall below the configured threshold.
  bool converged = true;
};

// Minimizes the reconstruction loss between model(input[i]) and target[i].
ReconstructionTraining train_reconstruction(ModelHandle model,
                                            std::span<const TensorD> inputs,
                                            std::span<const TensorD> targets,
                                            const OptimizerConfig& opt,
                                            ReconstructionLoss loss,
                                            double threshold);

// L1 self-reconstruction pretraining of an image-to-image model.
ReconstructionTraining pretrain_enhancer(ModelHandle model, std::span<const TensorD> arrays,
                                         const OptimizerConfig& opt,
                                         double threshold = 0.05);

double mean_abs_error(const ModelHandle& model, std::span<const TensorD> inputs,
                      std::span<const TensorD> targets);

}  // namespace veil
