#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "veil/error.hpp"
#include "veil/models.hpp"
#include "veil/rng.hpp"

namespace veil {
namespace {

namespace fs = std::filesystem;

TensorD random_input(const Shape& shape, std::uint64_t seed) {
  TensorD x(shape);
  Rng rng(seed);
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

TEST(Models, ReferenceArchitecturesProduceContractShapes) {
  auto enh = make_reference_model(Role::kEnhancer, {{8, 8, 1}, 0, 4}, 1);
  EXPECT_EQ(enh.architecture_id(), "encdec2d");
  EXPECT_EQ(enh.forward(random_input({8, 8, 1}, 0)).shape(), (Shape{8, 8, 1}));

  auto cls = make_reference_model(Role::kClassifier, {{8, 8, 1}, 10, 4}, 1);
  EXPECT_EQ(cls.architecture_id(), "framecnn");
  EXPECT_EQ(cls.forward(random_input({8, 8, 1}, 0)).shape(), (Shape{10}));

  auto util = make_reference_model(Role::kUtility, {{4, 8, 8, 1}, 4, 4}, 1);
  EXPECT_EQ(util.architecture_id(), "clipcnn3d");
  EXPECT_EQ(util.forward(random_input({4, 8, 8, 1}, 0)).shape(), (Shape{4}));
}

TEST(Models, EnhancerStartsAsIdentityMap) {
  auto enh = make_reference_model(Role::kEnhancer, {{6, 6, 2}, 0, 4}, 3);
  auto x = random_input({6, 6, 2}, 5);
  auto y = enh.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Models, InitializationIsDeterministicInSeed) {
  ShapeSpec spec{{8, 8, 1}, 5, 4};
  auto a = make_reference_model(Role::kClassifier, spec, 9);
  auto b = make_reference_model(Role::kClassifier, spec, 9);
  auto c = make_reference_model(Role::kClassifier, spec, 10);
  EXPECT_EQ(param_digest(a), param_digest(b));
  EXPECT_NE(param_digest(a), param_digest(c));
}

TEST(Models, RejectsMismatchedContracts) {
  EXPECT_THROW(make_model(Role::kUtility, "framecnn", {{8, 8, 1}, 4, 4}, 0), ValidationError);
  EXPECT_THROW(make_reference_model(Role::kClassifier, {{8, 8, 1}, 1, 4}, 0), ValidationError);
  EXPECT_THROW(make_model(Role::kEnhancer, "resnet50", {{8, 8, 1}, 0, 4}, 0), ValidationError);
  auto cls = make_reference_model(Role::kClassifier, {{8, 8, 1}, 3, 4}, 0);
  EXPECT_THROW(cls.forward(random_input({8, 8, 2}, 0)), ShapeError);
  EXPECT_THROW(cls.forward(random_input({4, 8, 8, 1}, 0)), ShapeError);
}

TEST(Models, FrozenHandleRefusesUpdates) {
  auto m = make_reference_model(Role::kClassifier, {{8, 8, 1}, 3, 4}, 0);
  const auto before = param_digest(m);
  m.freeze();
  EXPECT_TRUE(m.frozen());
  EXPECT_EQ(m.mode(), Mode::kEval);
  EXPECT_THROW(m.mutable_parameters(), InvariantViolation);
  EXPECT_THROW(m.set_parameters(std::vector<double>(m.num_params())), InvariantViolation);
  EXPECT_THROW(m.train(), InvariantViolation);
  EXPECT_EQ(param_digest(m), before);
}

TEST(Models, CopiesAreIndependent) {
  auto a = make_reference_model(Role::kCompensator, {{4, 4, 1}, 0, 2}, 0);
  auto b = a;
  b.mutable_parameters()[0] += 1.0;
  EXPECT_NE(param_digest(a), param_digest(b));
}

TEST(Models, DigestChangesWithAnyParameter) {
  auto m = make_reference_model(Role::kUtility, {{4, 4, 4, 1}, 3, 2}, 0);
  const auto d0 = param_digest(m);
  EXPECT_EQ(d0.size(), 64u);
  m.mutable_parameters()[m.num_params() - 1] += 1e-12;
  EXPECT_NE(param_digest(m), d0);
}

TEST(Models, CheckpointRoundTripPreservesEverything) {
  auto dir = fs::temp_directory_path() / "veil_models_ckpt";
  fs::create_directories(dir);
  for (Role role : {Role::kEnhancer, Role::kClassifier, Role::kUtility}) {
    ShapeSpec spec = role == Role::kUtility ? ShapeSpec{{4, 6, 6, 1}, 4, 3}
                     : role == Role::kClassifier ? ShapeSpec{{6, 6, 1}, 4, 3}
                                                 : ShapeSpec{{6, 6, 1}, 0, 3};
    auto m = make_reference_model(role, spec, 17);
    Rng rng(1);
    for (double& p : m.mutable_parameters()) p = rng.normal();
    m.freeze();
    const auto path = dir / (to_string(role) + ".varr");
    save_checkpoint(path, m);
    auto back = load_checkpoint(path);
    EXPECT_EQ(back.role(), role);
    EXPECT_EQ(back.architecture_id(), m.architecture_id());
    EXPECT_EQ(back.shape_spec(), spec);
    EXPECT_EQ(back.init_seed(), 17u);
    EXPECT_TRUE(back.frozen());
    EXPECT_EQ(param_digest(back), param_digest(m));
  }
}

TEST(Models, CheckpointRejectsTampering) {
  auto dir = fs::temp_directory_path() / "veil_models_tamper";
  fs::create_directories(dir);
  auto m = make_reference_model(Role::kClassifier, {{6, 6, 1}, 3, 2}, 0);
  const auto path = dir / "m.varr";
  save_checkpoint(path, m);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-3, std::ios::end);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(load_checkpoint(path), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.varr"), IoError);
}

TEST(Models, CustomArchitectureRegistration) {
  register_architecture("tiny_encdec", [](Role role, const ShapeSpec& spec) {
    if (role != Role::kRecovery) throw ValidationError("recovery only");
    return std::make_shared<nn::EncoderDecoder2d>(spec.input[2], 1);
  });
  auto m = make_model(Role::kRecovery, "tiny_encdec", {{4, 4, 1}, 0, 1}, 0);
  EXPECT_EQ(m.forward(random_input({4, 4, 1}, 0)).shape(), (Shape{4, 4, 1}));
  EXPECT_THROW(make_model(Role::kEnhancer, "tiny_encdec", {{4, 4, 1}, 0, 1}, 0),
               ValidationError);
}

}  // namespace
}  // namespace veil
