#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "veil/array_io.hpp"
#include "veil/datagen.hpp"
#include "veil/error.hpp"

namespace veil {
namespace {

namespace fs = std::filesystem;

SynthesisSpec small_spec(std::uint64_t seed = 7) {
  SynthesisSpec s;
  s.frames = 4;
  s.height = 8;
  s.width = 8;
  s.seed = seed;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("veil_datagen_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::set<std::string> ids(const Dataset& d) {
  std::set<std::string> out;
  for (const auto& c : d.clips) out.insert(c.clip_id);
  return out;
}

TEST(Synthetic, CountsAndLabels) {
  SynthesisSpec s;
  s.seed = 7;
  auto d = generate_synthetic(s);
  EXPECT_EQ(d.size(), 200u);
  EXPECT_EQ(d.num_identities, 10);
  EXPECT_EQ(d.num_expressions, 4);
  EXPECT_EQ(d.provenance, Provenance::kSynthetic);
  EXPECT_EQ(d.clips[0].frames.shape(), (Shape{16, 32, 32, 1}));
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(ids(d).size(), 200u);
}

TEST(Synthetic, Deterministic) {
  auto a = generate_synthetic(small_spec());
  auto b = generate_synthetic(small_spec());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.clips[i].clip_id, b.clips[i].clip_id);
    EXPECT_EQ(a.clips[i].frames, b.clips[i].frames);
  }
  auto c = generate_synthetic(small_spec(8));
  EXPECT_NE(a.clips[0].frames, c.clips[0].frames);
}

TEST(Synthetic, ZeroAmplitudeGivesStaticIdentityBase) {
  auto s = small_spec();
  s.expression_amplitude = 0.0;
  auto d = generate_synthetic(s);
  for (const auto& clip : d.clips) {
    const auto base = identity_base(s, clip.identity);
    for (std::size_t t = 0; t < clip.num_frames(); ++t) {
      const auto frame = clip.frames.slice(t);
      for (std::size_t p = 0; p < base.size(); ++p) {
        ASSERT_EQ(frame[p], std::clamp(base[p], 0.0f, 1.0f));
      }
    }
  }
}

// With noise off, the temporal mean of each clip differs from its identity
// base by at most the amplitude times the mean envelope.
TEST(Synthetic, TemporalMeanSeparatesFactors) {
  auto s = small_spec();
  s.frames = 16;
  auto d = generate_synthetic(s);
  for (const auto& clip : d.clips) {
    const auto base = identity_base(s, clip.identity);
    const auto mask = expression_mask(s, clip.expression);
    for (std::size_t p = 0; p < base.size(); ++p) {
      double mean = 0.0;
      for (std::size_t t = 0; t < clip.num_frames(); ++t) {
        mean += clip.frames[t * base.size() + p];
      }
      mean /= static_cast<double>(clip.num_frames());
      EXPECT_LE(std::abs(mean - base[p]), s.expression_amplitude * mask[p] + 1e-6);
    }
  }
}

TEST(Synthetic, ExpressionFrequenciesAreDistinct) {
  auto s = small_spec();
  s.frames = 64;
  // Zero crossings count the oscillation rate of each class.
  std::set<int> crossings;
  for (int e = 0; e < s.num_expressions; ++e) {
    int n = 0;
    for (int t = 1; t < s.frames; ++t) {
      if ((expression_envelope(s, e, t - 1, 0.3) < 0) != (expression_envelope(s, e, t, 0.3) < 0)) ++n;
    }
    crossings.insert(n);
  }
  EXPECT_EQ(crossings.size(), static_cast<std::size_t>(s.num_expressions));
}

TEST(Synthetic, RejectsInvalidSpec) {
  auto s = small_spec();
  s.num_identities = 1;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.noise_std = -0.1;
  try {
    generate_synthetic(s);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("noise_std"), std::string::npos);
  }
}

TEST(Split, StratifiedClosedSet) {
  SynthesisSpec s = small_spec();
  auto d = generate_synthetic(s);
  auto [train, test] = split(d, 0.25, 3);
  EXPECT_EQ(train.size(), 150u);
  EXPECT_EQ(test.size(), 50u);
  std::set<int> train_ids, test_ids;
  for (const auto& c : train.clips) train_ids.insert(c.identity);
  for (const auto& c : test.clips) test_ids.insert(c.identity);
  EXPECT_EQ(train_ids.size(), 10u);
  EXPECT_EQ(test_ids.size(), 10u);

  auto a = ids(train), b = ids(test);
  for (const auto& id : b) EXPECT_FALSE(a.count(id)) << id;
  a.insert(b.begin(), b.end());
  EXPECT_EQ(a, ids(d));
}

TEST(Split, DeterministicInSeed) {
  auto d = generate_synthetic(small_spec());
  auto [t1, s1] = split(d, 0.25, 3);
  auto [t2, s2] = split(d, 0.25, 3);
  EXPECT_EQ(ids(s1), ids(s2));
  auto [t3, s3] = split(d, 0.25, 4);
  EXPECT_NE(ids(s1), ids(s3));
}

TEST(Split, RejectsBadFractionAndTinyStrata) {
  auto d = generate_synthetic(small_spec());
  EXPECT_THROW(split(d, 0.0, 1), ValidationError);
  EXPECT_THROW(split(d, 1.0, 1), ValidationError);
  auto s = small_spec();
  s.clips_per_pair = 1;
  auto tiny = generate_synthetic(s);
  try {
    split(tiny, 0.5, 1);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("identity 0, expression 0"), std::string::npos);
  }
}

TEST(Serialization, BitExactRoundTrip) {
  auto d = generate_synthetic(small_spec());
  auto dir = scratch_dir("roundtrip");
  save_dataset(dir, d);
  auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.num_identities, d.num_identities);
  EXPECT_EQ(back.num_expressions, d.num_expressions);
  EXPECT_EQ(back.provenance, d.provenance);
  EXPECT_EQ(back.seed, d.seed);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.clips[i].clip_id, d.clips[i].clip_id);
    EXPECT_EQ(back.clips[i].identity, d.clips[i].identity);
    EXPECT_EQ(back.clips[i].expression, d.clips[i].expression);
    EXPECT_EQ(back.clips[i].frames, d.clips[i].frames);
  }
}

void write_pgm(const fs::path& path, int w, int h, int maxval, int fill) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n" << maxval << "\n";
  for (int i = 0; i < w * h; ++i) out.put(static_cast<char>(fill));
}

TEST(Ingest, InfersLabelCountsAndRescales) {
  auto dir = scratch_dir("ingest");
  nlohmann::json manifest = nlohmann::json::array();
  for (int k = 0; k < 3; ++k) {
    auto clip = dir / ("clip" + std::to_string(k));
    fs::create_directories(clip);
    for (int t = 0; t < 3; ++t) {
      write_pgm(clip / ("f" + std::to_string(t) + ".pgm"), 4, 2, 255, 51 * k);
    }
    manifest.push_back({{"file", "clip" + std::to_string(k)}, {"identity", k}, {"expression", k % 2}});
  }
  TensorF arr({3, 2, 4}, 255.0f);
  save_array(dir / "raw.varr", arr);
  manifest.push_back({{"file", "raw.varr"}, {"identity", 1}, {"expression", 1}});
  std::ofstream(dir / "manifest.json") << manifest.dump();

  auto d = ingest_directory(dir, dir / "manifest.json");
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d.num_identities, 3);
  EXPECT_EQ(d.num_expressions, 2);
  EXPECT_EQ(d.provenance, Provenance::kIngested);
  EXPECT_EQ(d.clips[0].frames.shape(), (Shape{3, 2, 4, 1}));
  EXPECT_FLOAT_EQ(d.clips[2].frames[0], 102.0f / 255.0f);
  EXPECT_EQ(d.clips[3].frames.shape(), (Shape{3, 2, 4, 1}));
  EXPECT_FLOAT_EQ(d.clips[3].frames[0], 1.0f);
}

TEST(Ingest, NamesMissingFileAndUnknownLabel) {
  auto dir = scratch_dir("ingest_errors");
  auto clip = dir / "present";
  fs::create_directories(clip);
  write_pgm(clip / "a.pgm", 2, 2, 255, 10);
  write_pgm(clip / "b.pgm", 2, 2, 255, 10);
  nlohmann::json manifest = {{"num_identities", 2},
                             {"clips",
                              {{{"file", "present"}, {"identity", 0}, {"expression", 0}},
                               {{"file", "absent.varr"}, {"identity", 1}, {"expression", 0}},
                               {{"file", "present"}, {"identity", 5}, {"expression", 0}}}}};
  std::ofstream(dir / "manifest.json") << manifest.dump();
  try {
    ingest_directory(dir, dir / "manifest.json");
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("absent.varr"), std::string::npos);
    EXPECT_NE(msg.find("unknown identity label 5"), std::string::npos);
  }
}

TEST(Ingest, RejectsSingleFrameClip) {
  auto dir = scratch_dir("ingest_short");
  fs::create_directories(dir / "one");
  write_pgm(dir / "one" / "a.pgm", 2, 2, 255, 10);
  nlohmann::json manifest = {{{"file", "one"}, {"identity", 0}, {"expression", 0}}};
  std::ofstream(dir / "manifest.json") << manifest.dump();
  EXPECT_THROW(ingest_directory(dir, dir / "manifest.json"), IoError);
}

TEST(Validation, RejectsOutOfRangePixelsAndDuplicateIds) {
  auto d = generate_synthetic(small_spec());
  auto bad = d;
  bad.clips[0].frames[0] = 1.5f;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = d;
  bad.clips[1].clip_id = bad.clips[0].clip_id;
  EXPECT_THROW(bad.validate(), ValidationError);
}

}  // namespace
}  // namespace veil
