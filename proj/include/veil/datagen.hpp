#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

enum class LabelField { kIdentity, kExpression };

// One labelled video; frames are T x H x W x C with values in [0, 1].
struct VideoClip {
  TensorF frames;
  int identity = 0;
  int expression = 0;
  std::string clip_id;

  std::size_t num_frames() const { return frames.dim(0); }
  int label(LabelField field) const {
    return field == LabelField::kIdentity ? identity : expression;
  }
};

enum class Provenance { kSynthetic, kIngested };

struct Dataset {
  std::vector<VideoClip> clips;
  int num_identities = 0;
  int num_expressions = 0;
  Provenance provenance = Provenance::kSynthetic;
  std::uint64_t seed = 0;

  std::size_t size() const { return clips.size(); }
  int num_classes(LabelField field) const {
    return field == LabelField::kIdentity ? num_identities : num_expressions;
  }
  // Throws ValidationError on the first broken invariant (value range,
  // label range and coverage, unique ids, uniform clip shape).
  void validate() const;
};

// Checks a single clip against the VideoClip invariants.
void validate_clip(const VideoClip& clip, int num_identities,
                   int num_expressions);

struct SynthesisSpec {
  int num_identities = 10;
  int num_expressions = 4;
  int clips_per_pair = 5;
  int frames = 16;
  int height = 32;
  int width = 32;
  int channels = 1;
  // Contrast of the per-identity static field around mid gray.
  double identity_pattern_scale = 1.0;
  // Peak deviation of the expression mask at full envelope.
  double expression_amplitude = 0.25;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Static per-identity spatial field, H x W x C, before clamping.
TensorF identity_base(const SynthesisSpec& spec, int identity);

// Zero-mean temporal envelope in [-1, 1] of expression `expression` at
// frame t for a clip with phase offset `phase` (radians).
double expression_envelope(const SynthesisSpec& spec, int expression, int t,
                           double phase);

// H x W spatial mask of an expression class: an oriented grating under a
// centred Gaussian window, values in [0, 1].
TensorF expression_mask(const SynthesisSpec& spec, int expression);

Dataset generate_synthetic(const SynthesisSpec& spec);

// Stratified by (identity, expression); each stratum contributes at least one
// clip to both halves. Clip order within each half follows the input.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction,
                                  std::uint64_t seed);

// Reads clips listed in a JSON manifest. Accepted clip sources are array
// container files (.varr) and directories of binary/ASCII netpbm frames
// (.pgm/.ppm) read in lexicographic order.
Dataset ingest_directory(const std::filesystem::path& root,
                         const std::filesystem::path& manifest);

// Directory of per-clip float32 arrays plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

std::string to_string(Provenance p);
std::string to_string(LabelField f);

}  // namespace veil
