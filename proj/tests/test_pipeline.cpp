#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "oracles.hpp"
#include "veil/error.hpp"
#include "veil/pipeline.hpp"

namespace veil {
namespace {

SynthesisSpec tiny_spec() {
  SynthesisSpec s;
  s.num_identities = 4;
  s.num_expressions = 2;
  s.clips_per_pair = 6;
  s.frames = 8;
  s.height = 12;
  s.width = 12;
  s.seed = 11;
  return s;
}

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.seed = 5;
  c.frame_seed = 5;
  c.enhancer_width = 4;
  c.classifier_width = 4;
  c.utility_width = 2;
  c.identity_pretrain.epochs = 30;
  c.expression_pretrain.epochs = 30;
  c.enhancer_pretrain.epochs = 4;
  c.alg1.epochs = 3;
  c.alg2.epochs = 3;
  c.utility.epochs = 25;
  c.attack.epochs = 2;
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto all = generate_synthetic(tiny_spec());
    auto halves = split(all, 0.25, 3);
    train_ = new Dataset(std::move(halves.first));
    test_ = new Dataset(std::move(halves.second));
    report_ = new PretrainReport;
    state_ = new PipelineState(pretrain_components(*train_, tiny_config(), report_));
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete report_;
    delete state_;
  }

  static Dataset* train_;
  static Dataset* test_;
  static PretrainReport* report_;
  static PipelineState* state_;
};

Dataset* PipelineTest::train_ = nullptr;
Dataset* PipelineTest::test_ = nullptr;
PretrainReport* PipelineTest::report_ = nullptr;
PipelineState* PipelineTest::state_ = nullptr;

void expect_same_clips(const Dataset& a, const Dataset& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.clips[i].clip_id, b.clips[i].clip_id);
    EXPECT_EQ(a.clips[i].identity, b.clips[i].identity);
    EXPECT_EQ(a.clips[i].expression, b.clips[i].expression);
    EXPECT_EQ(a.clips[i].frames.shape(), b.clips[i].frames.shape());
  }
}

TEST(GaussianBlur, KernelCenterMatchesFormula) {
  EXPECT_NEAR(gaussian_kernel_value(0, 0, 1.0), 0.159155, 1e-6);
  EXPECT_DOUBLE_EQ(gaussian_kernel_value(0, 0, 1.0), 1.0 / (2.0 * std::numbers::pi));
  EXPECT_DOUBLE_EQ(gaussian_kernel_value(1, 2, 1.5),
                   std::exp(-5.0 / 4.5) / (2.0 * std::numbers::pi * 2.25));
}

TEST(GaussianBlur, NormalizedKernelSumsToOne) {
  for (double sigma : {0.5, 1.0, 3.0}) {
    const auto k = gaussian_kernel(sigma, 3);
    ASSERT_EQ(k.size(), 49u);
    double sum = 0.0;
    for (double v : k) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(GaussianBlur, ConstantFrameUnchanged) {
  TensorF clip({2, 6, 5, 1}, 0.37f);
  const TensorF out = gaussian_blur(clip, 1.5, 3);
  for (float v : out.values()) EXPECT_NEAR(v, 0.37f, 1e-6);
}

TEST(GaussianBlur, RejectsBadParameters) {
  TensorF clip({2, 4, 4, 1}, 0.5f);
  EXPECT_THROW(gaussian_blur(clip, 0.0, 3), ValidationError);
  EXPECT_THROW(gaussian_blur(clip, 1.0, 0), ValidationError);
}

TEST_F(PipelineTest, PretrainedControllersShareTheValidator) {
  EXPECT_NO_THROW(state_->check_frozen());
  const auto d = state_->frozen_digests();
  EXPECT_EQ(d.at("C_hpr"), d.at("V_pl"));
  EXPECT_EQ(d.at("C_lpr"), d.at("V_pl"));
  EXPECT_EQ(state_->controller_high.architecture_id(), state_->validator.architecture_id());
  ASSERT_FALSE(report_->identity_accuracy.empty());
  EXPECT_GE(report_->identity_accuracy.back(), 0.99);
}

TEST_F(PipelineTest, CleanLeakageIsHigh) {
  const auto plr = privacy_leakage_ratio(state_->validator, test_->clips, 4, 5);
  EXPECT_GE(plr.plr, 0.9);
}

TEST_F(PipelineTest, EnhancerTrainingKeepsControllersAndBookkeeping) {
  const auto before = state_->frozen_digests();
  const auto result = train_privacy_enhancers(*state_, *train_, tiny_config());
  EXPECT_EQ(result.state.frozen_digests(), before);
  EXPECT_EQ(result.output.stage, Stage::kG);
  expect_same_clips(result.output.data, *train_);
  ASSERT_FALSE(result.low_loss.empty());
  EXPECT_GE(result.low_loss.back(), result.low_loss.front());
  EXPECT_NO_THROW(result.output.data.validate());
}

TEST_F(PipelineTest, EnhancerTrainingRefusesUnfrozenController) {
  PipelineState s = *state_;
  s.controller_high = make_reference_model(Role::kClassifier,
                                           state_->controller_high.shape_spec(), 1);
  EXPECT_THROW(train_privacy_enhancers(s, *train_, tiny_config()), InvariantViolation);
}

TEST_F(PipelineTest, CompensatorTrainingKeepsExpressionController) {
  const auto g = protect(*state_, *train_);
  EXPECT_EQ(g.stage, Stage::kG);
  const auto before = param_digest(state_->compensator_controller);
  const auto comp = train_feature_compensator(*state_, g, tiny_config());
  EXPECT_EQ(param_digest(comp.state.compensator_controller), before);
  EXPECT_EQ(comp.output.stage, Stage::kC);
  expect_same_clips(comp.output.data, *train_);
}

TEST_F(PipelineTest, CompensatorTrainingRejectsStageC) {
  ProtectedDataset c{*train_, Stage::kC};
  EXPECT_THROW(train_feature_compensator(*state_, c, tiny_config()), ValidationError);
}

TEST_F(PipelineTest, UtilityLearnsExpressionAndNotShuffledLabels) {
  const auto cfg = tiny_config().seeded();
  const auto real = train_utility(state_->utility, *train_, cfg.utility);
  const double acc = accuracy(real.model, test_->clips, LabelField::kExpression).accuracy;
  EXPECT_GT(acc, 0.8);

  const auto again = train_utility(state_->utility, *train_, cfg.utility);
  EXPECT_EQ(param_digest(again.model), param_digest(real.model));

  const auto null = train_utility(state_->utility, *train_, cfg.utility, true);
  EXPECT_LT(accuracy(null.model, test_->clips, LabelField::kExpression).accuracy, acc);
}

TEST_F(PipelineTest, TradeoffWithoutAdversaryKeepsIdentity) {
  PipelineConfig cfg = tiny_config();
  cfg.tradeoff_lambda = 0.0;
  const auto t = train_tradeoff_baseline(*train_, *state_, cfg);
  const Dataset anon = anonymize(t.anonymizer, *test_);
  expect_same_clips(anon, *test_);
  // The identity branch tracks the anonymizer, so identity stays readable.
  EXPECT_GE(accuracy(t.identity_adversary, anon.clips, LabelField::kIdentity).accuracy, 0.9);
}

TEST_F(PipelineTest, ThreatAttackOnIdentityProtection) {
  const auto t = run_threat_attack("identity", *train_, *train_, *test_, *test_,
                                   state_->validator, tiny_config());
  EXPECT_GT(t.ssim, 0.95);
  const double clean = privacy_leakage_ratio(state_->validator, test_->clips, 4, 5).plr;
  EXPECT_NEAR(t.plr, clean, 0.1);
}

TEST_F(PipelineTest, ThreatAttackRejectsMisalignedIds) {
  Dataset shuffled = *test_;
  std::swap(shuffled.clips[0], shuffled.clips[1]);
  EXPECT_THROW(run_threat_attack("x", *train_, *train_, shuffled, *test_, state_->validator,
                                 tiny_config()),
               ValidationError);
}

TEST_F(PipelineTest, AblationTasksEmitCompleteReports) {
  for (int task : {1, 3}) {
    const auto v = run_ablation(task, *state_, *train_, *test_, tiny_config());
    EXPECT_EQ(v.report.variant_id, "task" + std::to_string(task));
    EXPECT_NO_THROW(v.report.validate());
    EXPECT_EQ(v.report.identity_confusion.size(), 4u);
    EXPECT_EQ(v.report.per_class_accuracy.size(), 2u);
    EXPECT_DOUBLE_EQ(v.report.chance_level, 0.25);
    expect_same_clips(v.test_output, *test_);
    for (const char* name : {"C_hpr", "C_lpr", "C_fc", "V_pl"}) {
      EXPECT_EQ(param_digest(v.models.at(name)), state_->frozen_digests().at(name)) << name;
    }
  }
  EXPECT_THROW(run_ablation(7, *state_, *train_, *test_, tiny_config()), ValidationError);
}

TEST_F(PipelineTest, ProtectProjectsLowBand) {
  // With a margin the low band of every protected clip stays strictly inside
  // the frame range, so a static clip maps into [m, 1 - m].
  PipelineState s = *state_;
  s.low_band_margin = 0.25;
  const Dataset g = protect(s, *test_).data;
  for (const auto& clip : g.clips) {
    for (std::size_t p = 0; p < clip.frames.size() / clip.num_frames(); ++p) {
      double mean = 0.0;
      for (std::size_t t = 0; t < clip.num_frames(); ++t) {
        mean += clip.frames[t * (clip.frames.size() / clip.num_frames()) + p];
      }
      mean /= static_cast<double>(clip.num_frames());
      ASSERT_GE(mean, 0.25 - 1e-6);
      ASSERT_LE(mean, 0.75 + 1e-6);
    }
  }
}

TEST_F(PipelineTest, FullVariantIsDeterministic) {
  const auto a = run_full(*state_, *train_, *test_, tiny_config());
  const auto b = run_full(*state_, *train_, *test_, tiny_config());
  EXPECT_EQ(to_json(a.report), to_json(b.report));
  EXPECT_EQ(a.test_output.clips[0].frames, b.test_output.clips[0].frames);
  EXPECT_EQ(a.stage_g_test.size(), test_->size());
}

}  // namespace
}  // namespace veil
