#include "veil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "veil/error.hpp"
#include "veil/nn/loss.hpp"
#include "veil/rng.hpp"
#include "veil/training.hpp"

namespace veil {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ConfusionMatrix zero_confusion(int k) {
  return ConfusionMatrix(static_cast<std::size_t>(k), std::vector<long>(static_cast<std::size_t>(k), 0));
}

TensorD logits_for(const ModelHandle& m, const VideoClip& clip) {
  if (m.shape_spec().input.size() == 4) return m.forward(clip_tensor(clip));
  TensorD sum;
  for (std::size_t t = 0; t < clip.num_frames(); ++t) {
    TensorD y = m.forward(frame_tensor(clip, t));
    if (sum.empty()) {
      sum = std::move(y);
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) sum[i] += y[i];
    }
  }
  return sum;
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-(i - r) * (i - r) / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

std::size_t validator_frame(const std::string& clip_id, std::size_t num_frames,
                            std::uint64_t frame_seed) {
  Rng rng(frame_seed, Stream::kFrame, fnv1a(clip_id));
  return static_cast<std::size_t>(rng.below(num_frames));
}

PlrResult privacy_leakage_ratio(const ModelHandle& validator, std::span<const VideoClip> clips,
                                int num_identities, std::uint64_t frame_seed, bool frame_level) {
  if (validator.num_classes() != num_identities) {
    throw ValidationError("validator has " + std::to_string(validator.num_classes()) +
                          " classes but the data has " + std::to_string(num_identities) +
                          " identities");
  }
  if (!validator.frozen()) throw InvariantViolation("privacy_leakage_ratio: validator must be frozen");
  if (clips.empty()) throw ValidationError("privacy_leakage_ratio: no clips");
  PlrResult r{0.0, zero_confusion(num_identities)};
  long correct = 0, total = 0;
  for (const VideoClip& clip : clips) {
    if (clip.identity < 0 || clip.identity >= num_identities) {
      throw ValidationError("clip " + clip.clip_id + " identity out of range");
    }
    std::vector<std::size_t> frames;
    if (frame_level) {
      for (std::size_t t = 0; t < clip.num_frames(); ++t) frames.push_back(t);
    } else {
      frames.push_back(validator_frame(clip.clip_id, clip.num_frames(), frame_seed));
    }
    for (std::size_t t : frames) {
      const int p = nn::argmax(validator.forward(frame_tensor(clip, t)));
      ++r.confusion[static_cast<std::size_t>(clip.identity)][static_cast<std::size_t>(p)];
      correct += p == clip.identity;
      ++total;
    }
  }
  r.plr = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

AccuracyResult accuracy_from_predictions(std::span<const int> predictions,
                                         std::span<const int> labels, int num_classes) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("accuracy: predictions and labels differ in length");
  }
  if (labels.empty()) throw ValidationError("accuracy: no samples");
  AccuracyResult r;
  r.confusion = zero_confusion(num_classes);
  std::vector<long> support(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> hits(static_cast<std::size_t>(num_classes), 0);
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes) {
      throw ValidationError("accuracy: label or prediction out of range");
    }
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    ++support[static_cast<std::size_t>(y)];
    if (y == p) {
      ++hits[static_cast<std::size_t>(y)];
      ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (int k = 0; k < num_classes; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (support[kk] == 0) {
      r.per_class.emplace_back(std::nullopt);
    } else {
      r.per_class.emplace_back(static_cast<double>(hits[kk]) / static_cast<double>(support[kk]));
    }
  }
  return r;
}

std::vector<int> predict(const ModelHandle& classifier, std::span<const VideoClip> clips) {
  std::vector<int> out;
  out.reserve(clips.size());
  for (const VideoClip& c : clips) out.push_back(nn::argmax(logits_for(classifier, c)));
  return out;
}

AccuracyResult accuracy(const ModelHandle& classifier, std::span<const VideoClip> clips,
                        LabelField field) {
  std::vector<int> labels;
  for (const VideoClip& c : clips) labels.push_back(c.label(field));
  const std::vector<int> preds = predict(classifier, clips);
  return accuracy_from_predictions(preds, labels, classifier.num_classes());
}

double ssim(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  if (a.rank() != 3) throw ShapeError("ssim expects H x W x C frames");
  const std::size_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  int size = static_cast<int>(std::min<std::size_t>({11, H, W}));
  if (size % 2 == 0) --size;
  const std::vector<double> w = gaussian_window(size, 1.5);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t n = static_cast<std::size_t>(size);
  double total = 0.0;
  long count = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y0 = 0; y0 + n <= H; ++y0) {
      for (std::size_t x0 = 0; x0 + n <= W; ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t dy = 0; dy < n; ++dy) {
          for (std::size_t dx = 0; dx < n; ++dx) {
            const double g = w[dy] * w[dx];
            const std::size_t i = ((y0 + dy) * W + (x0 + dx)) * C + c;
            const double va = a[i], vb = b[i];
            ma += g * va;
            mb += g * vb;
            saa += g * va * va;
            sbb += g * vb * vb;
            sab += g * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return std::clamp(total / static_cast<double>(count), -1.0, 1.0);
}

double clip_ssim(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) throw ShapeError("clip_ssim: shape mismatch");
  if (a.rank() != 4) throw ShapeError("clip_ssim expects T x H x W x C clips");
  double s = 0.0;
  for (std::size_t t = 0; t < a.dim(0); ++t) s += ssim(a.slice(t), b.slice(t));
  return s / static_cast<double>(a.dim(0));
}

double psnr(const TensorF& a, const TensorF& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

void PrivacyReport::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(plr) || !in_unit(utility_accuracy) || !in_unit(chance_level)) {
    throw InvariantViolation("privacy report " + variant_id + ": metric outside [0, 1]");
  }
  long trace = 0, total = 0;
  for (std::size_t i = 0; i < identity_confusion.size(); ++i) {
    if (identity_confusion[i].size() != identity_confusion.size()) {
      throw InvariantViolation("privacy report: confusion matrix is not square");
    }
    for (long v : identity_confusion[i]) total += v;
    trace += identity_confusion[i][i];
  }
  if (total > 0 && static_cast<double>(trace) / static_cast<double>(total) != plr) {
    throw InvariantViolation("privacy report: plr differs from confusion trace / total");
  }
}

PrivacyReport make_privacy_report(std::string variant_id, std::uint64_t seed,
                                  const PlrResult& plr, const AccuracyResult& acc) {
  PrivacyReport r;
  r.variant_id = std::move(variant_id);
  r.seed = seed;
  r.plr = plr.plr;
  r.utility_accuracy = acc.accuracy;
  r.per_class_accuracy = acc.per_class;
  r.identity_confusion = plr.confusion;
  r.chance_level = plr.confusion.empty() ? 0.0 : 1.0 / static_cast<double>(plr.confusion.size());
  r.validate();
  return r;
}

namespace {

nlohmann::json number_or_sentinel(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

double read_number(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ValidationError("unexpected numeric string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

std::string to_json(const PrivacyReport& r) {
  nlohmann::json j;
  j["variant_id"] = r.variant_id;
  j["seed"] = r.seed;
  j["plr"] = r.plr;
  j["utility_accuracy"] = r.utility_accuracy;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_class_accuracy) per.push_back(v ? nlohmann::json(*v) : nlohmann::json("absent"));
  j["per_class_accuracy"] = per;
  j["identity_confusion"] = r.identity_confusion;
  j["chance_level"] = r.chance_level;
  return j.dump(2);
}

std::string to_json(const ThreatReport& r) {
  nlohmann::json j;
  j["method_id"] = r.method_id;
  j["ssim"] = r.ssim;
  j["psnr"] = number_or_sentinel(r.psnr);
  j["plr"] = r.plr;
  return j.dump(2);
}

PrivacyReport privacy_report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PrivacyReport r;
    r.variant_id = j.at("variant_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.plr = j.at("plr").get<double>();
    r.utility_accuracy = j.at("utility_accuracy").get<double>();
    for (const auto& v : j.at("per_class_accuracy")) {
      if (v.is_string()) {
        r.per_class_accuracy.emplace_back(std::nullopt);
      } else {
        r.per_class_accuracy.emplace_back(v.get<double>());
      }
    }
    r.identity_confusion = j.at("identity_confusion").get<ConfusionMatrix>();
    r.chance_level = j.at("chance_level").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("privacy report JSON: ") + e.what());
  }
}

ThreatReport threat_report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ThreatReport r;
    r.method_id = j.at("method_id").get<std::string>();
    r.ssim = j.at("ssim").get<double>();
    r.psnr = read_number(j.at("psnr"));
    r.plr = j.at("plr").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("threat report JSON: ") + e.what());
  }
}

TableRow table_row(const PrivacyReport& r) {
  return TableRow{r.variant_id, r.plr, r.utility_accuracy, std::nullopt, std::nullopt,
                  r.chance_level};
}

TableRow table_row(const ThreatReport& r, std::optional<double> chance) {
  return TableRow{r.method_id, r.plr, std::nullopt, r.ssim, r.psnr, chance};
}

std::vector<TableRow> assemble_report(const std::vector<TableRow>& rows) {
  std::vector<TableRow> out;
  for (const TableRow& row : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const TableRow& r) { return r.variant == row.variant; });
    if (it == out.end()) {
      out.push_back(row);
      continue;
    }
    auto fill = [](std::optional<double>& dst, const std::optional<double>& src) {
      if (src) dst = src;
    };
    fill(it->plr, row.plr);
    fill(it->acc, row.acc);
    fill(it->ssim, row.ssim);
    fill(it->psnr, row.psnr);
    fill(it->chance, row.chance);
  }
  return out;
}

std::string render_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << "variant,PLR,ACC,SSIM,PSNR,chance\n";
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (!v) {
      os << "absent";
    } else if (std::isinf(*v)) {
      os << (*v > 0 ? "inf" : "-inf");
    } else {
      os << std::setprecision(17) << *v;
    }
  };
  for (const TableRow& r : rows) {
    if (r.variant.find_first_of(",\n\"") != std::string::npos) {
      throw ValidationError("variant id '" + r.variant + "' cannot be written to CSV");
    }
    os << r.variant;
    cell(r.plr);
    cell(r.acc);
    cell(r.ssim);
    cell(r.psnr);
    cell(r.chance);
    os << '\n';
  }
  return os.str();
}

std::vector<TableRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "variant,PLR,ACC,SSIM,PSNR,chance") {
    throw ValidationError("comparison CSV: unexpected header");
  }
  std::vector<TableRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (cells.size() != 6) throw ValidationError("comparison CSV: bad row '" + line + "'");
    auto parse = [](const std::string& s) -> std::optional<double> {
      if (s == "absent") return std::nullopt;
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      return std::stod(s);
    };
    rows.push_back(TableRow{cells[0], parse(cells[1]), parse(cells[2]), parse(cells[3]),
                            parse(cells[4]), parse(cells[5])});
  }
  return rows;
}

}  // namespace veil
