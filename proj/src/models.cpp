#include "veil/models.hpp"

#include <map>
#include <mutex>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "veil/array_io.hpp"
#include "veil/error.hpp"

namespace veil {
namespace {

using nlohmann::json;

void require_spec(bool ok, Role role, const std::string& what) {
  if (!ok) {
    throw ValidationError("shape spec for role " + to_string(role) + ": " + what);
  }
}

std::shared_ptr<const nn::Network> build_encdec(Role role, const ShapeSpec& spec) {
  require_spec(role == Role::kEnhancer || role == Role::kCompensator ||
                   role == Role::kRecovery,
               role, "encdec2d serves enhancer, compensator or recovery roles");
  require_spec(spec.input.size() == 3, role, "input must be H x W x C");
  require_spec(spec.input[0] >= 2 && spec.input[1] >= 2, role, "H and W must be >= 2");
  require_spec(spec.num_classes == 0, role, "image-to-image models have no classes");
  return std::make_shared<nn::EncoderDecoder2d>(spec.input[2], spec.width);
}

std::shared_ptr<const nn::Network> build_framecnn(Role role, const ShapeSpec& spec) {
  require_spec(role == Role::kClassifier, role, "framecnn serves the classifier role");
  require_spec(spec.input.size() == 3, role, "input must be H x W x C");
  require_spec(spec.input[0] >= 4 && spec.input[1] >= 4, role, "H and W must be >= 4");
  require_spec(spec.num_classes >= 2, role, "num_classes must be >= 2");
  return std::make_shared<nn::FrameClassifier>(spec.input[2], spec.width,
                                               static_cast<std::size_t>(spec.num_classes));
}

std::shared_ptr<const nn::Network> build_clipcnn(Role role, const ShapeSpec& spec) {
  require_spec(role == Role::kUtility, role, "clipcnn3d serves the utility role");
  require_spec(spec.input.size() == 4, role, "input must be T x H x W x C");
  require_spec(spec.input[0] >= 2 && spec.input[1] >= 2 && spec.input[2] >= 2, role,
               "T, H and W must be >= 2");
  require_spec(spec.num_classes >= 2, role, "num_classes must be >= 2");
  return std::make_shared<nn::ClipClassifier>(spec.input[3], spec.width,
                                              static_cast<std::size_t>(spec.num_classes));
}

struct Registry {
  std::mutex mu;
  std::map<std::string, ArchitectureFactory> factories{
      {"encdec2d", build_encdec},
      {"framecnn", build_framecnn},
      {"clipcnn3d", build_clipcnn},
  };
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

std::string to_string(Role r) {
  switch (r) {
    case Role::kEnhancer: return "enhancer";
    case Role::kClassifier: return "classifier";
    case Role::kCompensator: return "compensator";
    case Role::kUtility: return "utility";
    case Role::kRecovery: return "recovery";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::kEnhancer, Role::kClassifier, Role::kCompensator, Role::kUtility,
                 Role::kRecovery}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown model role '" + s + "'");
}

ModelHandle::ModelHandle(Role role, std::string architecture_id, ShapeSpec spec,
                         std::uint64_t init_seed,
                         std::shared_ptr<const nn::Network> network)
    : role_(role),
      architecture_id_(std::move(architecture_id)),
      spec_(std::move(spec)),
      init_seed_(init_seed),
      network_(std::move(network)),
      params_(network_->num_params()) {
  network_->initialize(params_, init_seed_);
}

std::span<double> ModelHandle::mutable_parameters() {
  if (frozen_) {
    throw InvariantViolation("attempt to modify parameters of a frozen " +
                             to_string(role_) + " model");
  }
  return params_;
}

void ModelHandle::set_parameters(std::vector<double> values) {
  if (frozen_) {
    throw InvariantViolation("attempt to overwrite parameters of a frozen " +
                             to_string(role_) + " model");
  }
  if (values.size() != params_.size()) {
    throw ShapeError("set_parameters: expected " + std::to_string(params_.size()) +
                     " values, got " + std::to_string(values.size()));
  }
  params_ = std::move(values);
}

void ModelHandle::freeze() {
  frozen_ = true;
  mode_ = Mode::kEval;
}

void ModelHandle::train() {
  if (frozen_) {
    throw InvariantViolation("frozen " + to_string(role_) + " model cannot enter train mode");
  }
  mode_ = Mode::kTrain;
}

TensorD ModelHandle::forward(const TensorD& x) const {
  return network_->forward(params_, x, nullptr);
}

TensorD ModelHandle::forward(const TensorD& x, nn::Tape& tape) const {
  return network_->forward(params_, x, &tape);
}

TensorD ModelHandle::backward(const nn::Tape& tape, const TensorD& grad_out,
                              std::span<double> grad) const {
  return network_->backward(params_, tape, grad_out, grad);
}

TensorD ModelHandle::backward_input(const nn::Tape& tape, const TensorD& grad_out) const {
  std::vector<double> scratch(params_.size());
  return network_->backward(params_, tape, grad_out, scratch);
}

void register_architecture(const std::string& id, ArchitectureFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.factories[id] = std::move(factory);
}

ModelHandle make_model(Role role, const std::string& architecture_id,
                       const ShapeSpec& spec, std::uint64_t init_seed) {
  ArchitectureFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.factories.find(architecture_id);
    if (it == r.factories.end()) {
      throw ValidationError("unknown architecture '" + architecture_id + "'");
    }
    factory = it->second;
  }
  if (spec.width < 1) throw ValidationError("model width must be >= 1");
  return ModelHandle(role, architecture_id, spec, init_seed, factory(role, spec));
}

std::string reference_architecture(Role role) {
  switch (role) {
    case Role::kClassifier: return "framecnn";
    case Role::kUtility: return "clipcnn3d";
    default: return "encdec2d";
  }
}

ModelHandle make_reference_model(Role role, const ShapeSpec& spec, std::uint64_t init_seed) {
  return make_model(role, reference_architecture(role), spec, init_seed);
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data, size) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string param_digest(const ModelHandle& model) {
  const auto params = model.parameters();
  return sha256_hex(params.data(), params.size() * sizeof(double));
}

void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model) {
  json meta;
  meta["role"] = to_string(model.role());
  meta["architecture_id"] = model.architecture_id();
  meta["init_seed"] = model.init_seed();
  meta["input_shape"] = model.shape_spec().input;
  meta["num_classes"] = model.shape_spec().num_classes;
  meta["width"] = model.shape_spec().width;
  meta["frozen"] = model.frozen();
  meta["mode"] = model.mode() == Mode::kEval ? "eval" : "train";
  meta["digest"] = param_digest(model);
  ArrayContainer c;
  c.metadata = meta.dump();
  const auto params = model.parameters();
  for (const auto& spec : model.network().params()) {
    std::vector<double> block(params.begin() + spec.offset,
                              params.begin() + spec.offset + spec.size());
    c.arrays.push_back({spec.name, TensorD(spec.shape, std::move(block))});
  }
  write_container(path, c);
}

ModelHandle load_checkpoint(const std::filesystem::path& path) {
  ArrayContainer c = read_container(path);
  json meta;
  try {
    meta = json::parse(c.metadata);
  } catch (const json::exception& e) {
    throw IoError("checkpoint metadata unreadable in " + path.string() + ": " + e.what());
  }
  ShapeSpec spec;
  spec.input = meta.at("input_shape").get<Shape>();
  spec.num_classes = meta.at("num_classes").get<int>();
  spec.width = meta.at("width").get<int>();
  ModelHandle model = make_model(parse_role(meta.at("role").get<std::string>()),
                                 meta.at("architecture_id").get<std::string>(), spec,
                                 meta.at("init_seed").get<std::uint64_t>());
  std::vector<double> params(model.num_params());
  for (const auto& ps : model.network().params()) {
    const NamedArray* entry = c.find(ps.name);
    if (!entry) throw IoError("checkpoint " + path.string() + " lacks parameter " + ps.name);
    const auto* t = std::get_if<TensorD>(&entry->value);
    if (!t || t->shape() != ps.shape) {
      throw IoError("checkpoint parameter " + ps.name + " has wrong dtype or shape");
    }
    std::copy(t->values().begin(), t->values().end(), params.begin() + ps.offset);
  }
  model.set_parameters(std::move(params));
  if (param_digest(model) != meta.at("digest").get<std::string>()) {
    throw IoError("checkpoint digest mismatch in " + path.string());
  }
  if (meta.value("frozen", false)) model.freeze();
  else if (meta.value("mode", "train") == "eval") model.eval();
  return model;
}

}  // namespace veil
