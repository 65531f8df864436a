#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "veil/nn/network.hpp"
#include "veil/tensor.hpp"

namespace veil {

enum class Role { kEnhancer, kClassifier, kCompensator, kUtility, kRecovery };
enum class Mode { kTrain, kEval };

std::string to_string(Role r);
Role parse_role(const std::string& s);

// Input contract of a model: per-sample input shape (H x W x C for frame
// models, T x H x W x C for clip models), class count for classifier roles,
// and the channel width of the reference architectures.
struct ShapeSpec {
  Shape input;
  int num_classes = 0;
  int width = 8;

  friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

// A parametric differentiable function with train/eval and frozen state.
// Copies are independent (parameters are values; the architecture object is
// immutable and shared).
class ModelHandle {
 public:
  ModelHandle(Role role, std::string architecture_id, ShapeSpec spec,
              std::uint64_t init_seed, std::shared_ptr<const nn::Network> network);

  Role role() const { return role_; }
  const std::string& architecture_id() const { return architecture_id_; }
  const ShapeSpec& shape_spec() const { return spec_; }
  std::uint64_t init_seed() const { return init_seed_; }
  Mode mode() const { return mode_; }
  bool frozen() const { return frozen_; }
  const nn::Network& network() const { return *network_; }
  std::size_t num_params() const { return params_.size(); }
  int num_classes() const { return spec_.num_classes; }

  std::span<const double> parameters() const { return params_; }
  // Throws InvariantViolation when frozen.
  std::span<double> mutable_parameters();
  void set_parameters(std::vector<double> values);

  // Sets frozen = true and mode = eval. Irreversible for the handle.
  void freeze();
  // Switches to train mode; a frozen handle refuses.
  void train();
  void eval() { mode_ = Mode::kEval; }

  TensorD forward(const TensorD& x) const;
  TensorD forward(const TensorD& x, nn::Tape& tape) const;
  // Accumulates parameter gradients into `grad` (size num_params()) and
  // returns the input gradient.
  TensorD backward(const nn::Tape& tape, const TensorD& grad_out,
                   std::span<double> grad) const;
  // Input gradient only; used to differentiate through frozen models.
  TensorD backward_input(const nn::Tape& tape, const TensorD& grad_out) const;

 private:
  Role role_;
  std::string architecture_id_;
  ShapeSpec spec_;
  std::uint64_t init_seed_;
  std::shared_ptr<const nn::Network> network_;
  std::vector<double> params_;
  Mode mode_ = Mode::kTrain;
  bool frozen_ = false;
};

using ArchitectureFactory =
    std::function<std::shared_ptr<const nn::Network>(Role, const ShapeSpec&)>;

// Registers an architecture under `id` so that make_model and checkpoint
// loading can build it. Reference ids: "encdec2d", "framecnn", "clipcnn3d".
void register_architecture(const std::string& id, ArchitectureFactory factory);

ModelHandle make_model(Role role, const std::string& architecture_id,
                       const ShapeSpec& spec, std::uint64_t init_seed);

// Reference architecture per role: encoder-decoder for enhancer, compensator
// and recovery; frame CNN for classifier; 3-D CNN for utility.
ModelHandle make_reference_model(Role role, const ShapeSpec& spec,
                                 std::uint64_t init_seed);

std::string reference_architecture(Role role);

inline ModelHandle freeze(ModelHandle model) {
  model.freeze();
  return model;
}

std::string sha256_hex(const void* data, std::size_t size);

// Hex SHA-256 of the little-endian parameter bytes.
std::string param_digest(const ModelHandle& model);

// Checkpoint container: one float64 array per named parameter, metadata with
// role, architecture, shape spec, init seed, frozen flag and digest.
void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model);
ModelHandle load_checkpoint(const std::filesystem::path& path);

}  // namespace veil
