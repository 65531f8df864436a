#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veil/datagen.hpp"
#include "veil/models.hpp"

namespace veil {

using ConfusionMatrix = std::vector<std::vector<long>>;

struct PlrResult {
  double plr = 0.0;
  ConfusionMatrix confusion;  // rows: true identity, columns: prediction
};

// Frame index the validator sees for a clip; depends only on the clip id,
// frame count and seed.
std::size_t validator_frame(const std::string& clip_id, std::size_t num_frames,
                            std::uint64_t frame_seed);

// Clip-level leakage: one seeded frame per clip. With `frame_level` every
// frame is classified and the confusion counts frames instead of clips.
PlrResult privacy_leakage_ratio(const ModelHandle& validator, std::span<const VideoClip> clips,
                                int num_identities, std::uint64_t frame_seed,
                                bool frame_level = false);

struct AccuracyResult {
  double accuracy = 0.0;
  // Entry e is absent when no clip carries label e.
  std::vector<std::optional<double>> per_class;
  ConfusionMatrix confusion;
};

AccuracyResult accuracy_from_predictions(std::span<const int> predictions,
                                         std::span<const int> labels, int num_classes);

// Top-1 accuracy of a classifier over clips. Clip models see the whole clip;
// frame models average logits over frames.
AccuracyResult accuracy(const ModelHandle& classifier, std::span<const VideoClip> clips,
                        LabelField field);

std::vector<int> predict(const ModelHandle& classifier, std::span<const VideoClip> clips);

// Mean local SSIM between two H x W x C frames with values in [0, 1]:
// Gaussian window 11 x 11 (sigma 1.5, shrunk to the largest odd size that
// fits smaller frames), C1 = 0.01^2, C2 = 0.03^2, valid window positions,
// averaged over channels.
double ssim(const TensorF& a, const TensorF& b);
// Mean frame SSIM between two clips.
double clip_ssim(const TensorF& a, const TensorF& b);

// 10 log10(1 / MSE); +inf when the inputs are identical.
double psnr(const TensorF& a, const TensorF& b);
inline bool is_infinite_psnr(double v) { return v == std::numeric_limits<double>::infinity(); }

struct PrivacyReport {
  std::string variant_id;
  std::uint64_t seed = 0;
  double plr = 0.0;
  double utility_accuracy = 0.0;
  std::vector<std::optional<double>> per_class_accuracy;
  ConfusionMatrix identity_confusion;
  double chance_level = 0.0;

  // Throws InvariantViolation if ranges or confusion consistency break.
  void validate() const;
};

struct ThreatReport {
  std::string method_id;
  double ssim = 0.0;
  double psnr = 0.0;
  double plr = 0.0;
};

PrivacyReport make_privacy_report(std::string variant_id, std::uint64_t seed,
                                  const PlrResult& plr, const AccuracyResult& acc);

std::string to_json(const PrivacyReport& r);
std::string to_json(const ThreatReport& r);
PrivacyReport privacy_report_from_json(const std::string& text);
ThreatReport threat_report_from_json(const std::string& text);

// One row of the comparison table; unset metrics render as "absent".
struct TableRow {
  std::string variant;
  std::optional<double> plr, acc, ssim, psnr, chance;
};

TableRow table_row(const PrivacyReport& r);
TableRow table_row(const ThreatReport& r, std::optional<double> chance = std::nullopt);
// Merges rows with the same variant; a later row's present values win.
std::vector<TableRow> assemble_report(const std::vector<TableRow>& rows);
// Columns: variant,PLR,ACC,SSIM,PSNR,chance (lower PLR and higher ACC are
// better).
std::string render_csv(const std::vector<TableRow>& rows);
std::vector<TableRow> parse_csv(const std::string& text);

}  // namespace veil
