#include "veil/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "veil/array_io.hpp"
#include "veil/error.hpp"
#include "veil/rng.hpp"

namespace veil {
namespace {

using nlohmann::json;

constexpr int kIdentityModes = 6;
constexpr int kMaxSpatialFrequency = 3;
constexpr double kExpressionCyclesPerPixel = 0.25;

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("synthesis spec: " + what);
}

}  // namespace

std::string to_string(Provenance p) {
  return p == Provenance::kSynthetic ? "synthetic" : "ingested";
}

std::string to_string(LabelField f) {
  return f == LabelField::kIdentity ? "identity" : "expression";
}

void validate_clip(const VideoClip& clip, int num_identities,
                   int num_expressions) {
  const auto& f = clip.frames;
  if (f.rank() != 4) {
    throw ValidationError("clip " + clip.clip_id +
                          ": frames must be T x H x W x C, got " +
                          shape_string(f.shape()));
  }
  if (f.dim(0) < 2) {
    throw ValidationError("clip " + clip.clip_id + ": needs T >= 2 frames");
  }
  for (float v : f.values()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw ValidationError("clip " + clip.clip_id +
                            ": pixel values must be finite and in [0,1]");
    }
  }
  if (clip.identity < 0 || clip.identity >= num_identities) {
    throw ValidationError("clip " + clip.clip_id + ": identity " +
                          std::to_string(clip.identity) + " outside [0," +
                          std::to_string(num_identities) + ")");
  }
  if (clip.expression < 0 || clip.expression >= num_expressions) {
    throw ValidationError("clip " + clip.clip_id + ": expression " +
                          std::to_string(clip.expression) + " outside [0," +
                          std::to_string(num_expressions) + ")");
  }
}

void Dataset::validate() const {
  std::set<std::string> ids;
  std::vector<bool> seen_id(static_cast<std::size_t>(std::max(num_identities, 0)));
  std::vector<bool> seen_expr(static_cast<std::size_t>(std::max(num_expressions, 0)));
  for (const auto& clip : clips) {
    validate_clip(clip, num_identities, num_expressions);
    if (!ids.insert(clip.clip_id).second) {
      throw ValidationError("duplicate clip_id " + clip.clip_id);
    }
    if (clip.frames.shape() != clips.front().frames.shape()) {
      throw ValidationError("clip " + clip.clip_id + " has shape " +
                            shape_string(clip.frames.shape()) +
                            ", dataset uses " +
                            shape_string(clips.front().frames.shape()));
    }
    seen_id[clip.identity] = true;
    seen_expr[clip.expression] = true;
  }
  for (int i = 0; i < num_identities; ++i) {
    if (!seen_id[i]) {
      throw ValidationError("identity " + std::to_string(i) +
                            " has no clips");
    }
  }
  for (int e = 0; e < num_expressions; ++e) {
    if (!seen_expr[e]) {
      throw ValidationError("expression " + std::to_string(e) +
                            " has no clips");
    }
  }
}

void SynthesisSpec::validate() const {
  require(num_identities >= 2, "num_identities must be >= 2");
  require(num_expressions >= 2, "num_expressions must be >= 2");
  require(clips_per_pair >= 1, "clips_per_pair must be >= 1");
  require(frames >= 2, "frames must be >= 2");
  require(height >= 1 && width >= 1, "height and width must be >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(std::isfinite(noise_std) && noise_std >= 0.0,
          "noise_std must be >= 0");
  require(std::isfinite(expression_amplitude) && expression_amplitude >= 0.0,
          "expression_amplitude must be >= 0");
  require(std::isfinite(identity_pattern_scale) && identity_pattern_scale >= 0.0,
          "identity_pattern_scale must be >= 0");
}

TensorF identity_base(const SynthesisSpec& spec, int identity) {
  const auto H = static_cast<std::size_t>(spec.height);
  const auto W = static_cast<std::size_t>(spec.width);
  const auto C = static_cast<std::size_t>(spec.channels);
  TensorF base({H, W, C});
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng(spec.seed, Stream::kIdentityField,
            static_cast<std::uint64_t>(identity) * C + c);
    struct Mode {
      double amp, kx, ky, phase;
    };
    std::vector<Mode> modes;
    for (int m = 0; m < kIdentityModes; ++m) {
      Mode mode{};
      mode.amp = rng.normal();
      do {
        mode.kx = static_cast<double>(rng.below(kMaxSpatialFrequency + 1));
        mode.ky = static_cast<double>(rng.below(kMaxSpatialFrequency + 1));
      } while (mode.kx == 0.0 && mode.ky == 0.0);
      mode.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      modes.push_back(mode);
    }
    std::vector<double> field(H * W);
    double peak = 0.0;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.0;
        for (const auto& m : modes) {
          v += m.amp * std::cos(2.0 * std::numbers::pi *
                                    (m.kx * static_cast<double>(x) / W +
                                     m.ky * static_cast<double>(y) / H) +
                                m.phase);
        }
        field[y * W + x] = v;
        peak = std::max(peak, std::abs(v));
      }
    }
    const double gain = peak > 0.0 ? 0.25 * spec.identity_pattern_scale / peak : 0.0;
    for (std::size_t p = 0; p < H * W; ++p) {
      base[p * C + c] = static_cast<float>(0.5 + gain * field[p]);
    }
  }
  return base;
}

double expression_envelope(const SynthesisSpec& spec, int expression, int t,
                           double phase) {
  // Class e oscillates at pi * (1 - (e + 1) / (2 (E + 1))) radians per frame:
  // evenly spaced frequencies in the upper half of the band.
  const double omega =
      std::numbers::pi *
      (1.0 - (expression + 1) / (2.0 * static_cast<double>(spec.num_expressions + 1)));
  return std::sin(omega * t + phase);
}

TensorF expression_mask(const SynthesisSpec& spec, int expression) {
  const auto H = static_cast<std::size_t>(spec.height);
  const auto W = static_cast<std::size_t>(spec.width);
  // A grating whose orientation encodes the class, under a centred window.
  const double theta = std::numbers::pi * expression / static_cast<double>(spec.num_expressions);
  const double k = 2.0 * std::numbers::pi * kExpressionCyclesPerPixel;
  const double cy = 0.5 * static_cast<double>(H - 1);
  const double cx = 0.5 * static_cast<double>(W - 1);
  const double sigma = 0.3 * static_cast<double>(std::min(H, W));
  TensorF mask({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double window = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const double wave = 0.5 * (1.0 + std::cos(k * (dx * std::cos(theta) + dy * std::sin(theta))));
      mask[y * W + x] = static_cast<float>(window * wave);
    }
  }
  return mask;
}

Dataset generate_synthetic(const SynthesisSpec& spec) {
  spec.validate();
  const auto T = static_cast<std::size_t>(spec.frames);
  const auto H = static_cast<std::size_t>(spec.height);
  const auto W = static_cast<std::size_t>(spec.width);
  const auto C = static_cast<std::size_t>(spec.channels);

  std::vector<TensorF> bases;
  for (int i = 0; i < spec.num_identities; ++i) bases.push_back(identity_base(spec, i));
  std::vector<TensorF> masks;
  for (int e = 0; e < spec.num_expressions; ++e) masks.push_back(expression_mask(spec, e));

  Dataset ds;
  ds.num_identities = spec.num_identities;
  ds.num_expressions = spec.num_expressions;
  ds.provenance = Provenance::kSynthetic;
  ds.seed = spec.seed;
  std::uint64_t index = 0;
  for (int i = 0; i < spec.num_identities; ++i) {
    for (int e = 0; e < spec.num_expressions; ++e) {
      for (int k = 0; k < spec.clips_per_pair; ++k, ++index) {
        Rng rng(spec.seed, Stream::kClipNoise, index);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        VideoClip clip;
        clip.identity = i;
        clip.expression = e;
        std::ostringstream id;
        id << "syn_i" << i << "_e" << e << "_c" << k;
        clip.clip_id = id.str();
        clip.frames = TensorF({T, H, W, C});
        float* out = clip.frames.data();
        for (std::size_t t = 0; t < T; ++t) {
          const double env = spec.expression_amplitude *
                             expression_envelope(spec, e, static_cast<int>(t), phase);
          for (std::size_t p = 0; p < H * W; ++p) {
            const double mod = env * masks[e][p];
            for (std::size_t c = 0; c < C; ++c) {
              double v = bases[i][p * C + c] + mod;
              if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
              *out++ = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
          }
        }
        ds.clips.push_back(std::move(clip));
      }
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction,
                                  std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test_fraction must lie in (0, 1), got " +
                          std::to_string(test_fraction));
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
    const auto& c = dataset.clips[i];
    strata[{c.identity, c.expression}].push_back(i);
  }
  std::vector<std::string> too_small;
  for (const auto& [key, members] : strata) {
    if (members.size() < 2) {
      too_small.push_back("(identity " + std::to_string(key.first) +
                          ", expression " + std::to_string(key.second) + ": " +
                          std::to_string(members.size()) + " clip)");
    }
  }
  if (!too_small.empty()) {
    std::string msg = "split: strata too small to appear in both halves:";
    for (const auto& s : too_small) msg += " " + s;
    throw ValidationError(msg);
  }

  // Largest-remainder allocation of the global test count over strata, ties
  // broken by a seeded permutation; each stratum keeps >= 1 clip per side.
  const std::size_t total = dataset.clips.size();
  const auto target = static_cast<std::size_t>(std::llround(total * test_fraction));
  struct Quota {
    std::pair<int, int> key;
    std::size_t count;
    double remainder;
    std::size_t tiebreak;
  };
  std::vector<Quota> quotas;
  std::vector<std::size_t> order(strata.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng tie_rng(seed, Stream::kSplit, 0);
  tie_rng.shuffle(std::span(order));
  std::size_t assigned = 0;
  std::size_t s = 0;
  for (const auto& [key, members] : strata) {
    const double ideal = members.size() * test_fraction;
    const auto base = static_cast<std::size_t>(std::floor(ideal));
    quotas.push_back({key, base, ideal - base, order[s++]});
    assigned += base;
  }
  std::vector<std::size_t> by_remainder(quotas.size());
  std::iota(by_remainder.begin(), by_remainder.end(), std::size_t{0});
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (quotas[a].remainder != quotas[b].remainder) {
                       return quotas[a].remainder > quotas[b].remainder;
                     }
                     return quotas[a].tiebreak < quotas[b].tiebreak;
                   });
  for (std::size_t k = 0; assigned < target && k < by_remainder.size(); ++k) {
    ++quotas[by_remainder[k]].count;
    ++assigned;
  }

  std::vector<bool> is_test(total, false);
  std::size_t stratum_index = 0;
  for (auto& q : quotas) {
    auto members = strata[q.key];
    const std::size_t n = members.size();
    const std::size_t count = std::clamp<std::size_t>(q.count, 1, n - 1);
    Rng rng(seed, Stream::kSplit, 1 + stratum_index++);
    rng.shuffle(std::span(members));
    for (std::size_t k = 0; k < count; ++k) is_test[members[k]] = true;
  }

  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->num_identities = dataset.num_identities;
    d->num_expressions = dataset.num_expressions;
    d->provenance = dataset.provenance;
    d->seed = dataset.seed;
  }
  for (std::size_t i = 0; i < total; ++i) {
    (is_test[i] ? test : train).clips.push_back(dataset.clips[i]);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Ingest

namespace {

// Reads a binary (P5/P6) or ASCII (P2/P3) netpbm image as H x W x C floats
// scaled by 1/maxval.
TensorF read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open frame " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  const std::string magic = next_token();
  const bool binary = magic == "P5" || magic == "P6";
  const bool ascii = magic == "P2" || magic == "P3";
  if (!binary && !ascii) throw IoError("unreadable frame (not netpbm): " + path.string());
  const std::size_t C = (magic == "P6" || magic == "P3") ? 3 : 1;
  std::size_t W = 0, H = 0;
  long maxval = 0;
  try {
    W = std::stoul(next_token());
    H = std::stoul(next_token());
    maxval = std::stol(next_token());
  } catch (const std::exception&) {
    throw IoError("unreadable frame header: " + path.string());
  }
  if (W == 0 || H == 0 || maxval <= 0 || maxval > 65535) {
    throw IoError("unreadable frame header: " + path.string());
  }
  TensorF frame({H, W, C});
  const std::size_t n = H * W * C;
  if (binary) {
    const bool wide = maxval > 255;
    for (std::size_t i = 0; i < n; ++i) {
      int v = in.get();
      if (wide) v = (v << 8) | in.get();
      if (!in) throw IoError("truncated frame data: " + path.string());
      frame[i] = static_cast<float>(static_cast<double>(v) / maxval);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = next_token();
      if (tok.empty()) throw IoError("truncated frame data: " + path.string());
      frame[i] = static_cast<float>(std::stod(tok) / maxval);
    }
  }
  return frame;
}

TensorF read_clip_source(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  if (fs::is_directory(path)) {
    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(path)) {
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") frames.push_back(entry.path());
    }
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw IoError("no frames in " + path.string());
    std::vector<TensorF> decoded;
    for (const auto& f : frames) {
      decoded.push_back(read_netpbm(f));
      if (decoded.back().shape() != decoded.front().shape()) {
        throw IoError("frame " + f.string() + " differs in size from the first frame");
      }
    }
    return stack<float>(decoded);
  }
  TensorF arr = load_array(path);
  if (arr.rank() == 3) arr.reshape({arr.dim(0), arr.dim(1), arr.dim(2), 1});
  if (arr.rank() != 4) {
    throw IoError("array " + path.string() + " must be T x H x W [x C], got " +
                  shape_string(arr.shape()));
  }
  float peak = 0.0f;
  for (float v : arr.values()) {
    if (!std::isfinite(v) || v < 0.0f || v > 255.0f) {
      throw IoError("array " + path.string() + " has values outside [0,255]");
    }
    peak = std::max(peak, v);
  }
  if (peak > 1.0f) {
    for (float& v : arr.values()) v /= 255.0f;
  }
  return arr;
}

}  // namespace

Dataset ingest_directory(const std::filesystem::path& root,
                         const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("missing manifest " + manifest.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  const json& entries = doc.is_array() ? doc : doc.at("clips");
  const int declared_k = doc.is_object() ? doc.value("num_identities", -1) : -1;
  const int declared_e = doc.is_object() ? doc.value("num_expressions", -1) : -1;

  Dataset ds;
  ds.provenance = Provenance::kIngested;
  if (doc.is_object()) {
    if (doc.value("provenance", std::string("ingested")) == "synthetic") {
      ds.provenance = Provenance::kSynthetic;
    }
    ds.seed = doc.value("seed", std::uint64_t{0});
  }
  std::vector<std::string> problems;
  int max_id = -1, max_expr = -1;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& e = entries[i];
    std::string file;
    try {
      file = e.at("file").get<std::string>();
      VideoClip clip;
      clip.identity = e.at("identity").get<int>();
      clip.expression = e.at("expression").get<int>();
      clip.clip_id = e.value("clip_id", std::filesystem::path(file).stem().string());
      if (clip.identity < 0 || (declared_k > 0 && clip.identity >= declared_k)) {
        problems.push_back(file + ": unknown identity label " + std::to_string(clip.identity));
        continue;
      }
      if (clip.expression < 0 || (declared_e > 0 && clip.expression >= declared_e)) {
        problems.push_back(file + ": unknown expression label " +
                           std::to_string(clip.expression));
        continue;
      }
      clip.frames = read_clip_source(root / file);
      if (clip.frames.dim(0) < 2) {
        problems.push_back(file + ": clip has fewer than 2 frames");
        continue;
      }
      max_id = std::max(max_id, clip.identity);
      max_expr = std::max(max_expr, clip.expression);
      ds.clips.push_back(std::move(clip));
    } catch (const json::exception& ex) {
      problems.push_back("manifest entry " + std::to_string(i) + ": " + ex.what());
    } catch (const Error& ex) {
      problems.push_back(file + ": " + ex.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "ingest aborted:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IoError(msg);
  }
  ds.num_identities = declared_k > 0 ? declared_k : max_id + 1;
  ds.num_expressions = declared_e > 0 ? declared_e : max_expr + 1;
  ds.validate();
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clips");
  json doc;
  doc["num_identities"] = dataset.num_identities;
  doc["num_expressions"] = dataset.num_expressions;
  doc["provenance"] = to_string(dataset.provenance);
  doc["seed"] = dataset.seed;
  doc["clips"] = json::array();
  for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
    const auto& c = dataset.clips[i];
    char name[32];
    std::snprintf(name, sizeof(name), "clips/%06zu.varr", i);
    save_array(dir / name, c.frames);
    doc["clips"].push_back({{"clip_id", c.clip_id},
                            {"identity", c.identity},
                            {"expression", c.expression},
                            {"file", name}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  return ingest_directory(dir, dir / "manifest.json");
}

}  // namespace veil
