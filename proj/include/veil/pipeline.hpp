#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "veil/datagen.hpp"
#include "veil/frequency.hpp"
#include "veil/metrics.hpp"
#include "veil/models.hpp"
#include "veil/training.hpp"

namespace veil {

// How enhancer training raises the controllers' identity cross-entropy.
enum class AscentObjective {
  kNegatedCrossEntropy,  // descend on -CE(label)
  kUniformTarget,        // descend on CE against the uniform distribution
};

std::string to_string(AscentObjective o);
AscentObjective parse_objective(const std::string& s);

struct PipelineConfig {
  TransformConfig transform;
  int enhancer_width = 8;
  int classifier_width = 8;
  int utility_width = 4;

  OptimizerConfig identity_pretrain{OptimizerMethod::kAdam, 3e-3, 12, 16, 0, 0.0};
  OptimizerConfig expression_pretrain{OptimizerMethod::kAdam, 3e-3, 100, 16, 0, 0.0};
  OptimizerConfig enhancer_pretrain{OptimizerMethod::kAdam, 3e-3, 6, 16, 0, 0.0};
  OptimizerConfig alg1{OptimizerMethod::kAdam, 3e-4, 6, 8, 0, 0.0};
  OptimizerConfig alg2{OptimizerMethod::kAdam, 1e-3, 20, 8, 0, 0.0};
  OptimizerConfig utility{OptimizerMethod::kAdam, 3e-3, 20, 8, 0, 0.0};
  OptimizerConfig attack{OptimizerMethod::kAdam, 3e-3, 8, 16, 0, 0.0};

  AscentObjective objective = AscentObjective::kNegatedCrossEntropy;
  // Batch-mean ascent cross-entropy above which an epoch stops early.
  double loss_cap = 30.0;
  // Deviation of the Gaussian noise added to controller inputs during enhancer training.
  double ascent_noise = 0.0;
  // Frame-unit margin of the low-band projection (PipelineState field).
  double low_band_margin = 0.25;
  double enhancer_threshold = 0.05;
  // Pixel-noise deviation used while pretraining the identity classifier.
  double identity_augment_noise = 0.0;
  // Allowed epoch-over-epoch rise of the compensator loss before it is reported.
  double descent_slack = 0.05;
  double tradeoff_lambda = 1.0;
  std::vector<double> blur_sigmas{0.5, 1.0, 1.5, 2.0, 3.0};
  int blur_radius = 3;

  // Model initialization; also the shuffle seed unless one is given.
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> shuffle_seed;
  std::uint64_t frame_seed = 0;

  // Per-stage optimizer configs with their seeds derived from `seed`.
  PipelineConfig seeded() const;
  void validate() const;
};

// Pipeline components. Controllers and validator are frozen copies of one
// pretrained identity classifier.
struct PipelineState {
  TransformConfig transform;
  // false: single-stream variant operating on frames (ablation Tasks 1-3).
  bool wavelet = true;
  // Protected low band is projected to [margin, 1 - margin] in frame units.
  double low_band_margin = 0.0;
  ModelHandle enhancer_high;           // F_hpr
  ModelHandle enhancer_low;            // F_lpr (the single enhancer when !wavelet)
  ModelHandle controller_high;         // C_hpr
  ModelHandle controller_low;          // C_lpr
  ModelHandle compensator;             // F_fc
  ModelHandle compensator_controller;  // C_fc
  ModelHandle validator;               // V_pl
  ModelHandle utility;                 // F_u

  // Digests of the frozen handles keyed by component name.
  std::map<std::string, std::string> frozen_digests() const;
  // Throws InvariantViolation when a controller or validator is not frozen
  // or controllers and validator disagree on architecture.
  void check_frozen() const;
};

enum class Stage { kG, kC };
std::string to_string(Stage s);

struct ProtectedDataset {
  Dataset data;
  Stage stage = Stage::kG;
};

struct PretrainReport {
  std::vector<double> identity_accuracy;
  std::vector<double> expression_accuracy;
  double enhancer_loss = 0.0;
  bool enhancer_converged = true;
  double compensator_loss = 0.0;
  std::string identity_digest;
};

// Pretrains every component of the state on the training split.
PipelineState pretrain_components(const Dataset& train, const PipelineConfig& config,
                                  PretrainReport* report = nullptr);

struct PrivacyTraining {
  PipelineState state;
  ProtectedDataset output;
  std::vector<double> high_loss;  // epoch-mean controller CE on the high band
  std::vector<double> low_loss;   // epoch-mean controller CE on the low band
  std::vector<int> capped_epochs;
};

// Privacy-enhancer training against the frozen identity controllers.
PrivacyTraining train_privacy_enhancers(PipelineState state, const Dataset& train,
                                        const PipelineConfig& config);

// Applies the (trained) privacy enhancers: stage G.
ProtectedDataset protect(const PipelineState& state, const Dataset& data);
VideoClip protect_clip(const PipelineState& state, const VideoClip& clip);

struct Compensation {
  PipelineState state;
  ProtectedDataset output;
  std::vector<double> loss;  // epoch-mean C_fc cross-entropy
  bool descent_held = true;
};

// Compensator training against the frozen expression controller. `originals` is only used by the MSE-trained compensator of
// ablation Task 4 and must then align with `protected_g` by position.
Compensation train_feature_compensator(PipelineState state, const ProtectedDataset& protected_g,
                                       const PipelineConfig& config);
Compensation train_mse_compensator(PipelineState state, const ProtectedDataset& protected_g,
                                   const Dataset& originals, const PipelineConfig& config);

// Applies F_fc: stage C.
ProtectedDataset compensate(const PipelineState& state, const ProtectedDataset& protected_g);

struct UtilityTraining {
  ModelHandle model;
  std::vector<double> loss;
  std::vector<double> train_accuracy;
};

UtilityTraining train_utility(ModelHandle model, const Dataset& train, const OptimizerConfig& opt,
                              bool shuffle_labels = false);

// Unnormalized kernel value of the 2-D Gaussian at offset (x, y).
double gaussian_kernel_value(double x, double y, double sigma);
// Normalized (2r+1) x (2r+1) kernel, row-major.
std::vector<double> gaussian_kernel(double sigma, int radius);
// Per-frame 2-D blur with reflective (half-sample) boundary.
TensorF gaussian_blur(const TensorF& clip, double sigma, int kernel_radius);
Dataset gaussian_blur(const Dataset& data, double sigma, int kernel_radius);

struct TradeoffResult {
  ModelHandle anonymizer;
  ModelHandle identity_adversary;
  ModelHandle utility;
  std::vector<double> utility_loss;
  std::vector<double> identity_loss;
  std::vector<int> capped_epochs;
};

// Alternating min-max: anonymizer and utility minimize L_u - lambda * L_id;
// the identity branch then minimizes L_id on anonymized frames.
TradeoffResult train_tradeoff_baseline(const Dataset& train, const PipelineState& pretrained,
                                       const PipelineConfig& config);
Dataset anonymize(const ModelHandle& anonymizer, const Dataset& data);

// Trains a recovery encoder-decoder on (protected, original) training frames
// and scores it on the test pair.
ThreatReport run_threat_attack(const std::string& method_id, const Dataset& protected_train,
                               const Dataset& original_train, const Dataset& protected_test,
                               const Dataset& original_test, const ModelHandle& validator,
                               const PipelineConfig& config);

struct VariantResult {
  PrivacyReport report;
  Dataset train_output;
  Dataset test_output;
  // Stage-G clips of variants that end with a compensator; empty otherwise.
  Dataset stage_g_train;
  Dataset stage_g_test;
  // Named auxiliary numbers (e.g. stage-G leakage) for logging.
  std::map<std::string, double> extras;
  std::map<std::string, std::vector<double>> traces;
  // Final components keyed by name (F_hpr, F_lpr, F_fc, F_u, C_hpr, C_lpr,
  // C_fc, V_pl; the trade-off baseline adds its anonymizer).
  std::map<std::string, ModelHandle> models;
};

// Component map of a state with `utility` as F_u.
std::map<std::string, ModelHandle> component_models(const PipelineState& state,
                                                    const ModelHandle& utility);

// Enhancer training -> compensator training -> utility on stage C.
VariantResult run_full(const PipelineState& pretrained, const Dataset& train, const Dataset& test,
                       const PipelineConfig& config);
// Ablation variants, task_id 1..6.
VariantResult run_ablation(int task_id, const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config);
// No preservation: utility and validator on the raw clips.
VariantResult run_unprotected(const PipelineState& pretrained, const Dataset& train,
                              const Dataset& test, const PipelineConfig& config);
VariantResult run_gaussian(double sigma, const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config);
VariantResult run_tradeoff(const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config);

// Evaluates the final protected test clips: PLR from the frozen validator,
// ACC from the utility model.
PrivacyReport evaluate_variant(const std::string& variant_id, const PipelineState& state,
                               const ModelHandle& utility, const Dataset& test_output,
                               const PipelineConfig& config);

}  // namespace veil
