#include "veil/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "veil/error.hpp"
#include "veil/nn/loss.hpp"
#include "veil/rng.hpp"

namespace veil {

namespace {

enum SeedSlot : std::uint64_t {
  kSlotIdentity = 1,
  kSlotExpression,
  kSlotEnhancer,
  kSlotCompensator,
  kSlotUtility,
  kSlotAlg1,
  kSlotAlg2,
  kSlotUtilityOpt,
  kSlotAttack,
  kSlotRecovery,
  kSlotTradeoff,
  kSlotJoint,
};

std::uint64_t slot_seed(std::uint64_t seed, SeedSlot slot) {
  return derive_seed(seed, static_cast<std::uint64_t>(Stream::kInit), slot);
}

Shape frame_shape(const Dataset& d) {
  const Shape& s = d.clips.at(0).frames.shape();
  return {s[1], s[2], s[3]};
}

Shape clip_shape(const Dataset& d) { return d.clips.at(0).frames.shape(); }

void scale(TensorD& x, double g) {
  for (double& v : x.values()) v *= g;
}

TensorF clamp_unit(const TensorD& x) {
  TensorF out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::isfinite(x[i]) ? x[i] : 0.0;
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

// Fresh trainable copy of a (possibly frozen) handle.
ModelHandle thaw_copy(const ModelHandle& m) {
  ModelHandle out = make_model(m.role(), m.architecture_id(), m.shape_spec(), m.init_seed());
  out.set_parameters(std::vector<double>(m.parameters().begin(), m.parameters().end()));
  return out;
}

ModelHandle fresh_copy(const ModelHandle& m) {
  return make_model(m.role(), m.architecture_id(), m.shape_spec(), m.init_seed());
}

// Frozen-digest guard: snapshot on entry, compare on exit.
class FrozenGuard {
 public:
  FrozenGuard(const PipelineState& s, std::string op) : op_(std::move(op)) {
    s.check_frozen();
    before_ = s.frozen_digests();
  }
  void verify(const PipelineState& s) const {
    s.check_frozen();
    if (s.frozen_digests() != before_) {
      throw InvariantViolation(op_ + ": a frozen component changed its parameters");
    }
  }

 private:
  std::string op_;
  std::map<std::string, std::string> before_;
};

double gain(const PipelineState& s) {
  if (!s.wavelet) return 1.0;
  const double n = static_cast<double>(s.transform.levels * s.transform.axes().size());
  return std::pow(2.0, -n / 2.0);
}

// Frame-unit range of the low band after projection.
std::pair<double, double> low_band_range(const PipelineState& s) {
  const double m = s.wavelet ? s.low_band_margin : 0.0;
  return {m, 1.0 - m};
}

FrequencyPair<double> bands(const PipelineState& s, const TensorD& clip) {
  if (s.wavelet) return decompose(clip, s.transform);
  FrequencyPair<double> p;
  p.low = clip;
  p.config = s.transform;
  p.original_shape = clip.shape();
  return p;
}

TensorD merge(const PipelineState& s, const FrequencyPair<double>& p) {
  return s.wavelet ? reconstruct(p) : p.low;
}

FrequencyPair<double> merge_adjoint(const PipelineState& s, const TensorD& grad,
                                    const Shape& shape) {
  if (s.wavelet) return reconstruct_adjoint(grad, s.transform, shape);
  FrequencyPair<double> p;
  p.low = grad;
  p.config = s.transform;
  p.original_shape = shape;
  return p;
}

void average_into(std::vector<double>& grad, std::size_t n) {
  for (double& g : grad) g /= static_cast<double>(n);
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericalError(what + ": non-finite loss");
}

// One controller branch of enhancer training on the mid slice of a coefficient array.
// Returns the CE w.r.t. the identity label and accumulates enhancer grads.
double ascent_branch(const ModelHandle& enhancer, const ModelHandle& controller,
                     const TensorD& coeffs, int label, double g, AscentObjective objective,
                     double weight, double lo, double hi, double noise, Rng& rng,
                     std::span<double> grad) {
  const TensorD x = coeffs.slice(coeffs.dim(0) / 2);
  nn::Tape te, tc;
  TensorD z = enhancer.forward(x, te);
  scale(z, g);
  // The controller sees the slice in frame units, clamped to the band range.
  std::vector<bool> inside(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    inside[k] = z[k] >= lo && z[k] <= hi;
    z[k] = std::clamp(z[k], lo, hi);
  }
  // Perturbed controller input, so suppression must hold in a neighbourhood.
  if (noise > 0.0) {
    for (double& v : z.values()) v += noise * rng.normal();
  }
  const TensorD logits = controller.forward(z, tc);
  const auto ce = nn::cross_entropy(logits, label);
  TensorD dlogits;
  if (objective == AscentObjective::kNegatedCrossEntropy) {
    dlogits = ce.grad;
    scale(dlogits, -weight);
  } else {
    dlogits = nn::uniform_cross_entropy(logits).grad;
    scale(dlogits, weight);
  }
  TensorD dz = controller.backward_input(tc, dlogits);
  for (std::size_t k = 0; k < dz.size(); ++k) {
    if (!inside[k]) dz[k] = 0.0;
  }
  scale(dz, g);
  enhancer.backward(te, dz, grad);
  return ce.loss;
}

Dataset with_clips(const Dataset& like, std::vector<VideoClip> clips) {
  Dataset d;
  d.clips = std::move(clips);
  d.num_identities = like.num_identities;
  d.num_expressions = like.num_expressions;
  d.provenance = like.provenance;
  d.seed = like.seed;
  return d;
}

// F_hpr, F_lpr and F_u (or only F_lpr when !wavelet) trained jointly on the
// utility cross-entropy, without any controller.
// Runs for the enhancer-training budget so that the variants differ only in objective.
PipelineState joint_utility_training(PipelineState s, const Dataset& train,
                                     const OptimizerConfig& opt,
                                     const OptimizerConfig& utility_opt) {
  FrozenGuard guard(s, "joint utility training");
  s.enhancer_low.train();
  s.enhancer_high.train();
  s.utility.train();
  Optimizer ol(opt, s.enhancer_low.num_params());
  Optimizer oh(opt, s.enhancer_high.num_params());
  Optimizer ou(utility_opt, s.utility.num_params());
  std::vector<double> gl(s.enhancer_low.num_params()), gh(s.enhancer_high.num_params()),
      gu(s.utility.num_params());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum = 0.0;
    for (const auto& batch : epoch_batches(train.size(), opt, epoch)) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(gh.begin(), gh.end(), 0.0);
      std::fill(gu.begin(), gu.end(), 0.0);
      for (std::size_t i : batch) {
        const VideoClip& clip = train.clips[i];
        const TensorD x = clip_tensor(clip);
        FrequencyPair<double> p = bands(s, x);
        nn::Tape tl;
        std::vector<nn::Tape> th(p.high.size());
        p.low = s.enhancer_low.forward(p.low, tl);
        for (std::size_t k = 0; k < p.high.size(); ++k) {
          p.high[k] = s.enhancer_high.forward(p.high[k], th[k]);
        }
        // Train on what protect() emits: outputs clamped to [0, 1].
        TensorD y = merge(s, p);
        std::vector<bool> inside(y.size());
        for (std::size_t k = 0; k < y.size(); ++k) {
          inside[k] = y[k] >= 0.0 && y[k] <= 1.0;
          y[k] = std::clamp(y[k], 0.0, 1.0);
        }
        nn::Tape tu;
        const auto ce = nn::cross_entropy(s.utility.forward(y, tu), clip.expression);
        sum += ce.loss;
        TensorD dy = s.utility.backward(tu, ce.grad, gu);
        for (std::size_t k = 0; k < dy.size(); ++k) {
          if (!inside[k]) dy[k] = 0.0;
        }
        const auto dp = merge_adjoint(s, dy, x.shape());
        s.enhancer_low.backward(tl, dp.low, gl);
        for (std::size_t k = 0; k < p.high.size(); ++k) {
          s.enhancer_high.backward(th[k], dp.high[k], gh);
        }
      }
      average_into(gl, batch.size());
      average_into(gh, batch.size());
      average_into(gu, batch.size());
      ol.step(s.enhancer_low, gl);
      if (s.wavelet) oh.step(s.enhancer_high, gh);
      ou.step(s.utility, gu);
    }
    check_finite(sum, "joint utility training epoch " + std::to_string(epoch));
  }
  s.enhancer_low.eval();
  s.enhancer_high.eval();
  s.utility.eval();
  guard.verify(s);
  return s;
}

// Single-stream state for ablation Tasks 1-3: the frame enhancer pretrained
// for F_fc stands in for both privacy enhancers.
PipelineState single_stream(const PipelineState& pretrained) {
  PipelineState s = pretrained;
  s.wavelet = false;
  s.enhancer_low = thaw_copy(pretrained.compensator);
  s.enhancer_high = thaw_copy(pretrained.compensator);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(AscentObjective o) {
  return o == AscentObjective::kNegatedCrossEntropy ? "negated_ce" : "uniform_target";
}

AscentObjective parse_objective(const std::string& s) {
  if (s == "negated_ce") return AscentObjective::kNegatedCrossEntropy;
  if (s == "uniform_target") return AscentObjective::kUniformTarget;
  throw ValidationError("unknown ascent objective '" + s + "' (negated_ce|uniform_target)");
}

std::string to_string(Stage s) { return s == Stage::kG ? "G" : "C"; }

PipelineConfig PipelineConfig::seeded() const {
  PipelineConfig c = *this;
  const std::uint64_t base = shuffle_seed.value_or(seed);
  auto set = [&](OptimizerConfig& o, SeedSlot slot) {
    o.seed = derive_seed(base, static_cast<std::uint64_t>(Stream::kShuffle), slot);
  };
  set(c.identity_pretrain, kSlotIdentity);
  set(c.expression_pretrain, kSlotExpression);
  set(c.enhancer_pretrain, kSlotEnhancer);
  set(c.alg1, kSlotAlg1);
  set(c.alg2, kSlotAlg2);
  set(c.utility, kSlotUtilityOpt);
  set(c.attack, kSlotAttack);
  return c;
}

void PipelineConfig::validate() const {
  for (const OptimizerConfig* o : {&identity_pretrain, &expression_pretrain, &enhancer_pretrain,
                                   &alg1, &alg2, &utility, &attack}) {
    o->validate();
  }
  if (enhancer_width < 1 || classifier_width < 1 || utility_width < 1) {
    throw ValidationError("pipeline: model widths must be >= 1");
  }
  if (!(loss_cap > 0.0)) throw ValidationError("pipeline: loss_cap must be > 0");
  if (!(enhancer_threshold > 0.0)) throw ValidationError("pipeline: enhancer_threshold must be > 0");
  if (ascent_noise < 0.0) throw ValidationError("pipeline: ascent_noise must be >= 0");
  if (!(low_band_margin >= 0.0 && low_band_margin < 0.5)) {
    throw ValidationError("pipeline: low_band_margin must lie in [0, 0.5)");
  }
  if (identity_augment_noise < 0.0) {
    throw ValidationError("pipeline: identity_augment_noise must be >= 0");
  }
  if (descent_slack < 0.0) throw ValidationError("pipeline: descent_slack must be >= 0");
  if (tradeoff_lambda < 0.0) throw ValidationError("pipeline: tradeoff_lambda must be >= 0");
  if (blur_radius < 1) throw ValidationError("pipeline: blur_radius must be >= 1");
  for (double s : blur_sigmas) {
    if (!(s > 0.0)) throw ValidationError("pipeline: blur sigmas must be > 0");
  }
}

std::map<std::string, std::string> PipelineState::frozen_digests() const {
  return {{"C_hpr", param_digest(controller_high)},
          {"C_lpr", param_digest(controller_low)},
          {"C_fc", param_digest(compensator_controller)},
          {"V_pl", param_digest(validator)}};
}

void PipelineState::check_frozen() const {
  const std::pair<const char*, const ModelHandle*> frozen[] = {
      {"C_hpr", &controller_high},
      {"C_lpr", &controller_low},
      {"C_fc", &compensator_controller},
      {"V_pl", &validator}};
  for (const auto& [name, h] : frozen) {
    if (!h->frozen()) throw InvariantViolation(std::string(name) + " is not frozen");
  }
  if (controller_high.architecture_id() != validator.architecture_id() ||
      controller_low.architecture_id() != validator.architecture_id()) {
    throw InvariantViolation("controllers and validator differ in architecture");
  }
}

// ---------------------------------------------------------------------------

PipelineState pretrain_components(const Dataset& train, const PipelineConfig& config,
                                  PretrainReport* report) {
  const PipelineConfig cfg = config.seeded();
  cfg.validate();
  train.validate();
  const Shape fshape = frame_shape(train);
  cfg.transform.validate(clip_shape(train));

  ModelHandle id_model = make_reference_model(
      Role::kClassifier, {fshape, train.num_identities, cfg.classifier_width},
      slot_seed(cfg.seed, kSlotIdentity));
  auto id = pretrain_classifier(id_model, train, LabelField::kIdentity, FramePolicy::kAllFrames,
                                cfg.identity_pretrain, cfg.identity_augment_noise);
  ModelHandle identity = freeze(id.model);

  ModelHandle ex_model = make_reference_model(
      Role::kClassifier, {fshape, train.num_expressions, cfg.classifier_width},
      slot_seed(cfg.seed, kSlotExpression));
  auto ex = pretrain_classifier(ex_model, train, LabelField::kExpression,
                                FramePolicy::kOneRandomFramePerClip, cfg.expression_pretrain);

  // Enhancers see coefficient slices of both bands.
  const std::vector<Shape> cshapes = coefficient_shapes(clip_shape(train), cfg.transform);
  const Shape slice_shape(cshapes[0].begin() + 1, cshapes[0].end());
  std::vector<TensorD> slices;
  std::vector<TensorD> frames;
  for (std::size_t c = 0; c < train.size(); ++c) {
    const TensorD x = clip_tensor(train.clips[c]);
    const auto pair = decompose(x, cfg.transform);
    // One low and one high slice per clip keeps the pretraining set small.
    Rng rng(cfg.enhancer_pretrain.seed, Stream::kFrame, c);
    slices.push_back(pair.low.slice(rng.below(pair.low.dim(0))));
    const TensorD& h = pair.high[rng.below(pair.high.size())];
    slices.push_back(h.slice(rng.below(h.dim(0))));
    frames.push_back(x.slice(rng.below(x.dim(0))));
    frames.push_back(x.slice(rng.below(x.dim(0))));
  }
  ModelHandle enh = make_reference_model(Role::kEnhancer, {slice_shape, 0, cfg.enhancer_width},
                                         slot_seed(cfg.seed, kSlotEnhancer));
  auto enh_trained = pretrain_enhancer(enh, slices, cfg.enhancer_pretrain, cfg.enhancer_threshold);
  ModelHandle comp = make_reference_model(Role::kCompensator, {fshape, 0, cfg.enhancer_width},
                                          slot_seed(cfg.seed, kSlotCompensator));
  auto comp_trained =
      pretrain_enhancer(comp, frames, cfg.enhancer_pretrain, cfg.enhancer_threshold);

  ModelHandle utility = make_reference_model(
      Role::kUtility, {clip_shape(train), train.num_expressions, cfg.utility_width},
      slot_seed(cfg.seed, kSlotUtility));

  enh_trained.model.eval();
  comp_trained.model.eval();
  PipelineState s{cfg.transform,
                  true,
                  cfg.low_band_margin,
                  enh_trained.model,
                  enh_trained.model,
                  identity,
                  identity,
                  comp_trained.model,
                  freeze(ex.model),
                  identity,
                  utility};
  s.check_frozen();
  if (report) {
    report->identity_accuracy = id.accuracy_trace;
    report->expression_accuracy = ex.accuracy_trace;
    report->enhancer_loss = enh_trained.final_loss;
    report->enhancer_converged = enh_trained.converged && comp_trained.converged;
    report->compensator_loss = comp_trained.final_loss;
    report->identity_digest = param_digest(identity);
  }
  return s;
}

// ---------------------------------------------------------------------------

PrivacyTraining train_privacy_enhancers(PipelineState state, const Dataset& train,
                                        const PipelineConfig& config) {
  const PipelineConfig cfg = config.seeded();
  FrozenGuard guard(state, "train_privacy_enhancers");
  if (state.controller_low.num_classes() != train.num_identities) {
    throw ValidationError("controllers classify " +
                          std::to_string(state.controller_low.num_classes()) +
                          " identities, data has " + std::to_string(train.num_identities));
  }
  PrivacyTraining out{state, {}, {}, {}, {}};
  PipelineState& s = out.state;
  s.enhancer_low.train();
  s.enhancer_high.train();
  const double g = gain(s);
  const auto [low_lo, low_hi] = low_band_range(s);
  const OptimizerConfig& opt = cfg.alg1;
  Optimizer ol(opt, s.enhancer_low.num_params());
  Optimizer oh(opt, s.enhancer_high.num_params());
  std::vector<double> gl(s.enhancer_low.num_params()), gh(s.enhancer_high.num_params());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum_l = 0.0, sum_h = 0.0;
    std::size_t seen = 0;
    bool capped = false;
    for (const auto& batch : epoch_batches(train.size(), opt, epoch)) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(gh.begin(), gh.end(), 0.0);
      double bl = 0.0, bh = 0.0;
      for (std::size_t i : batch) {
        const VideoClip& clip = train.clips[i];
        const auto p = bands(s, clip_tensor(clip));
        Rng rng(opt.seed, Stream::kClipNoise, static_cast<std::uint64_t>(epoch) * train.size() + i);
        bl += ascent_branch(s.enhancer_low, s.controller_low, p.low, clip.identity, g,
                            cfg.objective, 1.0, low_lo, low_hi, cfg.ascent_noise, rng, gl);
        for (const TensorD& h : p.high) {
          bh += ascent_branch(s.enhancer_high, s.controller_high, h, clip.identity, g,
                              cfg.objective, 1.0 / static_cast<double>(p.high.size()), -1.0,
                              1.0, cfg.ascent_noise, rng, gh) /
                static_cast<double>(p.high.size());
        }
      }
      bl /= static_cast<double>(batch.size());
      bh /= static_cast<double>(batch.size());
      check_finite(bl + bh, "enhancer training epoch " + std::to_string(epoch));
      // A branch above the cap skips its update; the epoch stops once every
      // branch is capped.
      const bool low_capped = bl > cfg.loss_cap;
      const bool high_capped = !s.wavelet || bh > cfg.loss_cap;
      if (low_capped && high_capped) {
        capped = true;
        break;
      }
      sum_l += bl * static_cast<double>(batch.size());
      sum_h += bh * static_cast<double>(batch.size());
      seen += batch.size();
      average_into(gl, batch.size());
      average_into(gh, batch.size());
      if (!low_capped) ol.step(s.enhancer_low, gl);
      if (!high_capped) oh.step(s.enhancer_high, gh);
    }
    if (capped) out.capped_epochs.push_back(epoch);
    if (seen > 0) {
      out.low_loss.push_back(sum_l / static_cast<double>(seen));
      out.high_loss.push_back(sum_h / static_cast<double>(seen));
    }
  }
  s.enhancer_low.eval();
  s.enhancer_high.eval();
  out.output = protect(s, train);
  guard.verify(s);
  return out;
}

VideoClip protect_clip(const PipelineState& s, const VideoClip& clip) {
  auto p = bands(s, clip_tensor(clip));
  const double g = gain(s);
  // Same band ranges the controllers see during enhancer training.
  auto project = [g](TensorD& c, double lo, double hi) {
    for (double& v : c.values()) v = std::clamp(v * g, lo, hi) / g;
  };
  const auto [lo, hi] = low_band_range(s);
  p.low = s.enhancer_low.forward(p.low);
  project(p.low, lo, hi);
  for (TensorD& h : p.high) {
    h = s.enhancer_high.forward(h);
    project(h, -1.0, 1.0);
  }
  VideoClip out = clip;
  out.frames = clamp_unit(merge(s, p));
  return out;
}

ProtectedDataset protect(const PipelineState& state, const Dataset& data) {
  std::vector<VideoClip> clips;
  clips.reserve(data.size());
  for (const VideoClip& c : data.clips) clips.push_back(protect_clip(state, c));
  return {with_clips(data, std::move(clips)), Stage::kG};
}

// ---------------------------------------------------------------------------

Compensation train_feature_compensator(PipelineState state, const ProtectedDataset& protected_g,
                                       const PipelineConfig& config) {
  if (protected_g.stage != Stage::kG) {
    throw ValidationError("train_feature_compensator expects stage-G input, got stage " +
                          to_string(protected_g.stage));
  }
  const PipelineConfig cfg = config.seeded();
  FrozenGuard guard(state, "train_feature_compensator");
  const Dataset& data = protected_g.data;
  if (state.compensator_controller.num_classes() != data.num_expressions) {
    throw ValidationError("C_fc class count does not match the expression labels");
  }
  Compensation out{state, {}, {}, true};
  PipelineState& s = out.state;
  s.compensator.train();
  const OptimizerConfig& opt = cfg.alg2;
  Optimizer o(opt, s.compensator.num_params());
  std::vector<double> grad(s.compensator.num_params());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum = 0.0;
    for (const auto& batch : epoch_batches(data.size(), opt, epoch)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i : batch) {
        const VideoClip& clip = data.clips[i];
        Rng rng(opt.seed, Stream::kFrame,
                static_cast<std::uint64_t>(epoch) * data.size() + i);
        const TensorD x = frame_tensor(clip, rng.below(clip.num_frames()));
        nn::Tape tf, tc;
        const TensorD y = s.compensator.forward(x, tf);
        const auto ce =
            nn::cross_entropy(s.compensator_controller.forward(y, tc), clip.expression);
        if (!std::isfinite(ce.loss)) {
          throw NumericalError("compensator training: non-finite loss at epoch " + std::to_string(epoch) +
                               " on clip " + clip.clip_id);
        }
        sum += ce.loss;
        s.compensator.backward(tf, s.compensator_controller.backward_input(tc, ce.grad), grad);
      }
      average_into(grad, batch.size());
      o.step(s.compensator, grad);
    }
    out.loss.push_back(sum / static_cast<double>(data.size()));
    if (out.loss.size() > 1 &&
        out.loss.back() > out.loss[out.loss.size() - 2] + cfg.descent_slack) {
      out.descent_held = false;
    }
  }
  s.compensator.eval();
  out.output = compensate(s, protected_g);
  guard.verify(s);
  return out;
}

Compensation train_mse_compensator(PipelineState state, const ProtectedDataset& protected_g,
                                   const Dataset& originals, const PipelineConfig& config) {
  if (protected_g.stage != Stage::kG) {
    throw ValidationError("compensator training expects stage-G input");
  }
  if (originals.size() != protected_g.data.size()) {
    throw ValidationError("compensator training: originals do not align with stage-G clips");
  }
  const PipelineConfig cfg = config.seeded();
  FrozenGuard guard(state, "train_mse_compensator");
  std::vector<TensorD> inputs, targets;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const VideoClip& g = protected_g.data.clips[i];
    const VideoClip& v = originals.clips[i];
    if (g.clip_id != v.clip_id) {
      throw ValidationError("compensator training: clip id mismatch " + g.clip_id + " vs " +
                            v.clip_id);
    }
    Rng rng(cfg.alg2.seed, Stream::kFrame, i);
    const std::size_t t = rng.below(g.num_frames());
    inputs.push_back(frame_tensor(g, t));
    targets.push_back(frame_tensor(v, t));
  }
  OptimizerConfig opt = cfg.alg2;
  auto r = train_reconstruction(thaw_copy(state.compensator), inputs, targets, opt,
                                ReconstructionLoss::kMse, std::numeric_limits<double>::infinity());
  Compensation out{state, {}, r.loss_trace, true};
  out.state.compensator = r.model;
  out.state.compensator.eval();
  out.output = compensate(out.state, protected_g);
  guard.verify(out.state);
  return out;
}

ProtectedDataset compensate(const PipelineState& state, const ProtectedDataset& protected_g) {
  std::vector<VideoClip> clips;
  clips.reserve(protected_g.data.size());
  for (const VideoClip& c : protected_g.data.clips) {
    VideoClip out = c;
    out.frames = clamp_unit(state.compensator.forward(clip_tensor(c)));
    clips.push_back(std::move(out));
  }
  return {with_clips(protected_g.data, std::move(clips)), Stage::kC};
}

// ---------------------------------------------------------------------------

UtilityTraining train_utility(ModelHandle model, const Dataset& train, const OptimizerConfig& opt,
                              bool shuffle_labels) {
  opt.validate();
  if (model.role() != Role::kUtility) {
    throw ValidationError("train_utility needs a utility-role model");
  }
  if (model.num_classes() != train.num_expressions) {
    throw ValidationError("utility model has " + std::to_string(model.num_classes()) +
                          " classes, data has " + std::to_string(train.num_expressions) +
                          " expressions");
  }
  std::vector<int> labels;
  for (const VideoClip& c : train.clips) labels.push_back(c.expression);
  if (shuffle_labels) {
    Rng rng(opt.seed, Stream::kLabelShuffle, 0);
    rng.shuffle(std::span(labels));
  }
  model.train();
  UtilityTraining out{model, {}, {}};
  ModelHandle& m = out.model;
  Optimizer o(opt, m.num_params());
  std::vector<double> grad(m.num_params());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : epoch_batches(train.size(), opt, epoch)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i : batch) {
        nn::Tape tape;
        const TensorD logits = m.forward(clip_tensor(train.clips[i]), tape);
        const auto ce = nn::cross_entropy(logits, labels[i]);
        sum += ce.loss;
        correct += nn::argmax(logits) == labels[i];
        m.backward(tape, ce.grad, grad);
      }
      average_into(grad, batch.size());
      o.step(m, grad);
    }
    check_finite(sum, "utility training epoch " + std::to_string(epoch));
    out.loss.push_back(sum / static_cast<double>(train.size()));
    out.train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(train.size()));
  }
  m.eval();
  return out;
}

// ---------------------------------------------------------------------------

double gaussian_kernel_value(double x, double y, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("gaussian kernel: sigma must be > 0");
  return std::exp(-(x * x + y * y) / (2.0 * sigma * sigma)) /
         (2.0 * std::numbers::pi * sigma * sigma);
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0.0)) throw ValidationError("gaussian_blur: sigma must be > 0");
  if (radius < 1) throw ValidationError("gaussian_blur: kernel_radius must be >= 1");
  const int n = 2 * radius + 1;
  std::vector<double> k(static_cast<std::size_t>(n * n));
  double total = 0.0;
  for (int y = -radius; y <= radius; ++y) {
    for (int x = -radius; x <= radius; ++x) {
      const double v = gaussian_kernel_value(x, y, sigma);
      k[static_cast<std::size_t>((y + radius) * n + (x + radius))] = v;
      total += v;
    }
  }
  for (double& v : k) v /= total;
  return k;
}

TensorF gaussian_blur(const TensorF& clip, double sigma, int kernel_radius) {
  const std::vector<double> k = gaussian_kernel(sigma, kernel_radius);
  if (clip.rank() != 4) throw ShapeError("gaussian_blur expects T x H x W x C clips");
  const std::size_t T = clip.dim(0), H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return static_cast<std::size_t>(i);
  };
  const long r = kernel_radius, n = 2 * r + 1;
  TensorF out(clip.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const float* src = clip.data() + t * H * W * C;
    float* dst = out.data() + t * H * W * C;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (long dy = -r; dy <= r; ++dy) {
            const std::size_t yy = reflect(static_cast<long>(y) + dy, static_cast<long>(H));
            for (long dx = -r; dx <= r; ++dx) {
              const std::size_t xx = reflect(static_cast<long>(x) + dx, static_cast<long>(W));
              acc += k[static_cast<std::size_t>((dy + r) * n + (dx + r))] *
                     src[(yy * W + xx) * C + c];
            }
          }
          dst[(y * W + x) * C + c] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Dataset gaussian_blur(const Dataset& data, double sigma, int kernel_radius) {
  std::vector<VideoClip> clips = data.clips;
  for (VideoClip& c : clips) c.frames = gaussian_blur(c.frames, sigma, kernel_radius);
  return with_clips(data, std::move(clips));
}

// ---------------------------------------------------------------------------

TradeoffResult train_tradeoff_baseline(const Dataset& train, const PipelineState& pretrained,
                                       const PipelineConfig& config) {
  const PipelineConfig cfg = config.seeded();
  cfg.validate();
  TradeoffResult out{thaw_copy(pretrained.compensator), thaw_copy(pretrained.validator),
                     fresh_copy(pretrained.utility), {}, {}, {}};
  ModelHandle& A = out.anonymizer;
  ModelHandle& D = out.identity_adversary;
  ModelHandle& U = out.utility;
  A.train();
  D.train();
  U.train();
  OptimizerConfig opt = cfg.utility;
  opt.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::kShuffle), kSlotTradeoff);
  // The anonymizer is an enhancer and steps at the enhancer-training rate.
  OptimizerConfig anon_opt = opt;
  anon_opt.learning_rate = cfg.alg1.learning_rate;
  anon_opt.grad_clip = cfg.alg1.grad_clip;
  Optimizer oa(anon_opt, A.num_params()), od(opt, D.num_params()), ou(opt, U.num_params());
  std::vector<double> ga(A.num_params()), gd(D.num_params()), gu(U.num_params());
  const double lambda = cfg.tradeoff_lambda;
  const double chance_ce = std::log(static_cast<double>(train.num_identities));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double su = 0.0, sid = 0.0;
    std::size_t seen = 0;
    bool capped = false;
    for (const auto& batch : epoch_batches(train.size(), opt, epoch)) {
      std::fill(ga.begin(), ga.end(), 0.0);
      std::fill(gd.begin(), gd.end(), 0.0);
      std::fill(gu.begin(), gu.end(), 0.0);
      std::vector<std::pair<TensorD, int>> anonymized;
      double bu = 0.0, bid = 0.0;
      for (std::size_t i : batch) {
        const VideoClip& clip = train.clips[i];
        nn::Tape ta, tu, td;
        // Train on what anonymize() emits: outputs clamped to [0, 1].
        TensorD y = A.forward(clip_tensor(clip), ta);
        std::vector<bool> inside(y.size());
        for (std::size_t k = 0; k < y.size(); ++k) {
          inside[k] = y[k] >= 0.0 && y[k] <= 1.0;
          y[k] = std::clamp(y[k], 0.0, 1.0);
        }
        const auto lu = nn::cross_entropy(U.forward(y, tu), clip.expression);
        TensorD dy = U.backward(tu, lu.grad, gu);
        Rng rng(opt.seed, Stream::kFrame, static_cast<std::uint64_t>(epoch) * train.size() + i);
        const std::size_t t = rng.below(clip.num_frames());
        const TensorD frame = y.slice(t);
        const auto lid = nn::cross_entropy(D.forward(frame, td), clip.identity);
        // The ascent term saturates at chance-level cross-entropy.
        TensorD dlogits = lid.grad;
        scale(dlogits, lid.loss < chance_ce ? -lambda : 0.0);
        const TensorD dframe = D.backward_input(td, dlogits);
        const std::size_t n = dframe.size();
        for (std::size_t k = 0; k < n; ++k) dy[t * n + k] += dframe[k];
        for (std::size_t k = 0; k < dy.size(); ++k) {
          if (!inside[k]) dy[k] = 0.0;
        }
        A.backward(ta, dy, ga);
        anonymized.emplace_back(frame, clip.identity);
        bu += lu.loss;
        bid += lid.loss;
      }
      bu /= static_cast<double>(batch.size());
      bid /= static_cast<double>(batch.size());
      check_finite(bu + bid, "trade-off epoch " + std::to_string(epoch));
      if (lambda > 0.0 && bid > cfg.loss_cap) {
        capped = true;
        break;
      }
      average_into(ga, batch.size());
      average_into(gu, batch.size());
      oa.step(A, ga);
      ou.step(U, gu);
      for (const auto& [frame, label] : anonymized) {
        nn::Tape td;
        const auto lid = nn::cross_entropy(D.forward(frame, td), label);
        D.backward(td, lid.grad, gd);
      }
      average_into(gd, batch.size());
      od.step(D, gd);
      su += bu * static_cast<double>(batch.size());
      sid += bid * static_cast<double>(batch.size());
      seen += batch.size();
    }
    if (capped) out.capped_epochs.push_back(epoch);
    if (seen > 0) {
      out.utility_loss.push_back(su / static_cast<double>(seen));
      out.identity_loss.push_back(sid / static_cast<double>(seen));
    }
  }
  A.eval();
  D.eval();
  U.eval();
  return out;
}

Dataset anonymize(const ModelHandle& anonymizer, const Dataset& data) {
  std::vector<VideoClip> clips = data.clips;
  for (VideoClip& c : clips) c.frames = clamp_unit(anonymizer.forward(clip_tensor(c)));
  return with_clips(data, std::move(clips));
}

// ---------------------------------------------------------------------------

ThreatReport run_threat_attack(const std::string& method_id, const Dataset& protected_train,
                               const Dataset& original_train, const Dataset& protected_test,
                               const Dataset& original_test, const ModelHandle& validator,
                               const PipelineConfig& config) {
  const PipelineConfig cfg = config.seeded();
  auto check_aligned = [](const Dataset& a, const Dataset& b, const char* what) {
    if (a.size() != b.size()) {
      throw ValidationError(std::string("threat attack: ") + what + " sets differ in size");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.clips[i].clip_id != b.clips[i].clip_id) {
        throw ValidationError(std::string("threat attack: misaligned ") + what + " clip ids " +
                              a.clips[i].clip_id + " vs " + b.clips[i].clip_id);
      }
    }
  };
  check_aligned(protected_train, original_train, "training");
  check_aligned(protected_test, original_test, "test");

  std::vector<TensorD> inputs, targets;
  for (std::size_t i = 0; i < protected_train.size(); ++i) {
    const VideoClip& p = protected_train.clips[i];
    for (std::size_t t = 0; t < p.num_frames(); ++t) {
      inputs.push_back(frame_tensor(p, t));
      targets.push_back(frame_tensor(original_train.clips[i], t));
    }
  }
  ModelHandle recovery = make_reference_model(
      Role::kRecovery, {frame_shape(protected_train), 0, cfg.enhancer_width},
      slot_seed(cfg.seed, kSlotRecovery));
  auto trained = train_reconstruction(recovery, inputs, targets, cfg.attack,
                                      ReconstructionLoss::kL1,
                                      std::numeric_limits<double>::infinity());
  trained.model.eval();

  std::vector<VideoClip> recovered;
  double ssim_sum = 0.0, se = 0.0;
  std::size_t frames = 0, values = 0;
  for (std::size_t i = 0; i < protected_test.size(); ++i) {
    VideoClip r = protected_test.clips[i];
    r.frames = clamp_unit(trained.model.forward(clip_tensor(r)));
    const TensorF& o = original_test.clips[i].frames;
    for (std::size_t t = 0; t < r.num_frames(); ++t) {
      ssim_sum += ssim(r.frames.slice(t), o.slice(t));
      ++frames;
    }
    for (std::size_t k = 0; k < o.size(); ++k) {
      const double d = static_cast<double>(r.frames[k]) - static_cast<double>(o[k]);
      se += d * d;
    }
    values += o.size();
    recovered.push_back(std::move(r));
  }
  ThreatReport rep;
  rep.method_id = method_id;
  rep.ssim = ssim_sum / static_cast<double>(frames);
  const double mse = se / static_cast<double>(values);
  rep.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
  rep.plr = privacy_leakage_ratio(validator, recovered, original_test.num_identities,
                                  cfg.frame_seed)
                .plr;
  return rep;
}

// ---------------------------------------------------------------------------

std::map<std::string, ModelHandle> component_models(const PipelineState& s,
                                                    const ModelHandle& utility) {
  return {{"F_hpr", s.enhancer_high},          {"F_lpr", s.enhancer_low},
          {"F_fc", s.compensator},             {"F_u", utility},
          {"C_hpr", s.controller_high},        {"C_lpr", s.controller_low},
          {"C_fc", s.compensator_controller},  {"V_pl", s.validator}};
}

PrivacyReport evaluate_variant(const std::string& variant_id, const PipelineState& state,
                               const ModelHandle& utility, const Dataset& test_output,
                               const PipelineConfig& config) {
  state.check_frozen();
  const auto plr = privacy_leakage_ratio(state.validator, test_output.clips,
                                         test_output.num_identities, config.frame_seed);
  const auto acc = accuracy(utility, test_output.clips, LabelField::kExpression);
  return make_privacy_report(variant_id, config.seed, plr, acc);
}

namespace {

double stage_plr(const PipelineState& s, const Dataset& d, const PipelineConfig& cfg) {
  return privacy_leakage_ratio(s.validator, d.clips, d.num_identities, cfg.frame_seed).plr;
}

// Enhancer training on `state`, then optionally a compensator (CE or MSE), then a fresh
// utility model on the final training output.
VariantResult privacy_variant(const std::string& id, const PipelineState& state,
                              const Dataset& train, const Dataset& test,
                              const PipelineConfig& cfg, int compensation) {
  VariantResult v;
  v.extras["plr_clean"] = stage_plr(state, test, cfg);
  auto alg1 = train_privacy_enhancers(state, train, cfg);
  v.traces["alg1_low_ce"] = alg1.low_loss;
  v.traces["alg1_high_ce"] = alg1.high_loss;
  v.extras["alg1_capped_epochs"] = static_cast<double>(alg1.capped_epochs.size());
  const ProtectedDataset g_test = protect(alg1.state, test);
  v.extras["plr_stage_g"] = stage_plr(alg1.state, g_test.data, cfg);

  PipelineState final_state = alg1.state;
  ProtectedDataset train_out = alg1.output, test_out = g_test;
  if (compensation == 1) {
    auto comp = train_feature_compensator(alg1.state, alg1.output, cfg);
    v.traces["alg2_ce"] = comp.loss;
    v.extras["alg2_descent_held"] = comp.descent_held ? 1.0 : 0.0;
    final_state = comp.state;
    train_out = comp.output;
    test_out = compensate(comp.state, g_test);
  } else if (compensation == 2) {
    auto comp = train_mse_compensator(alg1.state, alg1.output, train, cfg);
    v.traces["alg2_mse"] = comp.loss;
    final_state = comp.state;
    train_out = comp.output;
    test_out = compensate(comp.state, g_test);
  }
  if (compensation != 0) {
    v.stage_g_train = alg1.output.data;
    v.stage_g_test = g_test.data;
  }
  auto util = train_utility(fresh_copy(state.utility), train_out.data, cfg.seeded().utility);
  v.traces["utility_loss"] = util.loss;
  v.report = evaluate_variant(id, final_state, util.model, test_out.data, cfg);
  v.models = component_models(final_state, util.model);
  v.train_output = std::move(train_out.data);
  v.test_output = std::move(test_out.data);
  return v;
}

}  // namespace

VariantResult run_full(const PipelineState& pretrained, const Dataset& train, const Dataset& test,
                       const PipelineConfig& config) {
  return privacy_variant("full", pretrained, train, test, config, 1);
}

VariantResult run_unprotected(const PipelineState& pretrained, const Dataset& train,
                              const Dataset& test, const PipelineConfig& config) {
  VariantResult v;
  auto util = train_utility(fresh_copy(pretrained.utility), train, config.seeded().utility);
  v.traces["utility_loss"] = util.loss;
  v.report = evaluate_variant("none", pretrained, util.model, test, config);
  v.models = component_models(pretrained, util.model);
  v.train_output = train;
  v.test_output = test;
  return v;
}

VariantResult run_ablation(int task_id, const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config) {
  const std::string id = "task" + std::to_string(task_id);
  const PipelineConfig cfg = config.seeded();
  switch (task_id) {
    case 1:
      return privacy_variant(id, single_stream(pretrained), train, test, config, 1);
    case 3:
      return privacy_variant(id, single_stream(pretrained), train, test, config, 0);
    case 4:
      return privacy_variant(id, pretrained, train, test, config, 2);
    case 5:
      return privacy_variant(id, pretrained, train, test, config, 0);
    case 2:
    case 6: {
      VariantResult v;
      PipelineState s = task_id == 2 ? single_stream(pretrained) : pretrained;
      s.utility = fresh_copy(pretrained.utility);
      OptimizerConfig opt = cfg.alg1;
      opt.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::kShuffle), kSlotJoint);
      s = joint_utility_training(s, train, opt, cfg.utility);
      const ProtectedDataset g_train = protect(s, train), g_test = protect(s, test);
      v.extras["plr_clean"] = stage_plr(s, test, cfg);
      v.extras["plr_stage_g"] = stage_plr(s, g_test.data, cfg);
      if (task_id == 6) {
        auto util = train_utility(fresh_copy(pretrained.utility), g_train.data, cfg.utility);
        v.traces["utility_loss"] = util.loss;
        v.report = evaluate_variant(id, s, util.model, g_test.data, cfg);
        v.models = component_models(s, util.model);
        v.train_output = g_train.data;
        v.test_output = g_test.data;
        return v;
      }
      auto comp = train_feature_compensator(s, g_train, cfg);
      v.traces["alg2_ce"] = comp.loss;
      const ProtectedDataset c_test = compensate(comp.state, g_test);
      auto util = train_utility(fresh_copy(pretrained.utility), comp.output.data, cfg.utility);
      v.report = evaluate_variant(id, comp.state, util.model, c_test.data, cfg);
      v.models = component_models(comp.state, util.model);
      v.train_output = comp.output.data;
      v.test_output = c_test.data;
      v.stage_g_train = g_train.data;
      v.stage_g_test = g_test.data;
      return v;
    }
    default:
      throw ValidationError("ablation task id must lie in 1..6, got " + std::to_string(task_id));
  }
}

VariantResult run_gaussian(double sigma, const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config) {
  VariantResult v;
  v.train_output = gaussian_blur(train, sigma, config.blur_radius);
  v.test_output = gaussian_blur(test, sigma, config.blur_radius);
  auto util = train_utility(fresh_copy(pretrained.utility), v.train_output, config.seeded().utility);
  std::ostringstream id;
  id << "gaussian(" << sigma << ")";
  v.report = evaluate_variant(id.str(), pretrained, util.model, v.test_output, config);
  v.models = component_models(pretrained, util.model);
  v.extras["sigma"] = sigma;
  return v;
}

VariantResult run_tradeoff(const PipelineState& pretrained, const Dataset& train,
                           const Dataset& test, const PipelineConfig& config) {
  VariantResult v;
  auto t = train_tradeoff_baseline(train, pretrained, config);
  v.traces["utility_loss"] = t.utility_loss;
  v.traces["identity_loss"] = t.identity_loss;
  v.train_output = anonymize(t.anonymizer, train);
  v.test_output = anonymize(t.anonymizer, test);
  std::ostringstream id;
  id << "tradeoff(" << config.tradeoff_lambda << ")";
  v.report = evaluate_variant(id.str(), pretrained, t.utility, v.test_output, config);
  v.models = component_models(pretrained, t.utility);
  v.models.insert_or_assign("anonymizer", t.anonymizer);
  v.models.insert_or_assign("identity_adversary", t.identity_adversary);
  return v;
}

}  // namespace veil
