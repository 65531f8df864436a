#include "veil/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "veil/error.hpp"

namespace veil {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kFrozenComponents[] = {"C_hpr", "C_lpr", "C_fc", "V_pl"};
const char* const kComponents[] = {"F_hpr", "F_lpr", "F_fc", "F_u",
                                   "C_hpr", "C_lpr", "C_fc", "V_pl"};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// Reads typed fields out of a config object, recording defaults, type
// errors and unknown keys instead of stopping at the first problem.
class FieldReader {
 public:
  FieldReader(std::vector<std::string>& errors, std::vector<std::string>& defaulted)
      : errors_(errors), defaulted_(defaulted) {}

  // Sub-object at `key`; missing objects read as empty (all defaults).
  const json& object(const json& parent, const std::string& pointer, const std::string& key) {
    static const json kEmpty = json::object();
    if (!parent.is_object() || !parent.contains(key)) return kEmpty;
    const json& v = parent.at(key);
    if (!v.is_object()) {
      errors_.push_back(pointer + "/" + key + ": expected an object");
      return kEmpty;
    }
    return v;
  }

  template <typename T>
  void field(const json& obj, const std::string& pointer, const std::string& key, T& out) {
    if (!obj.contains(key) || obj.at(key).is_null()) {
      defaulted_.push_back(pointer + "/" + key);
      return;
    }
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(pointer + "/" + key + ": wrong type (" + obj.at(key).dump() + ")");
    }
  }

  void unknown_keys(const json& obj, const std::string& pointer,
                    std::initializer_list<const char*> known) {
    if (!obj.is_object()) return;
    for (const auto& [k, v] : obj.items()) {
      if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
        errors_.push_back(pointer + "/" + k + ": unknown key");
      }
    }
  }

  void check(bool ok, const std::string& what) {
    if (!ok) errors_.push_back(what);
  }

  // Runs a validator and records its message.
  template <typename F>
  void validate(const std::string& pointer, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      errors_.push_back(pointer + ": " + e.what());
    }
  }

 private:
  std::vector<std::string>& errors_;
  std::vector<std::string>& defaulted_;
};

void read_optimizer(FieldReader& r, const json& parent, const std::string& pointer,
                    const std::string& key, OptimizerConfig& o) {
  const std::string p = pointer + "/" + key;
  const json& obj = r.object(parent, pointer, key);
  r.unknown_keys(obj, p, {"method", "learning_rate", "epochs", "batch_size", "grad_clip"});
  std::string method = to_string(o.method);
  r.field(obj, p, "method", method);
  r.validate(p + "/method", [&] { o.method = parse_optimizer(method); });
  r.field(obj, p, "learning_rate", o.learning_rate);
  r.field(obj, p, "epochs", o.epochs);
  r.field(obj, p, "batch_size", o.batch_size);
  r.field(obj, p, "grad_clip", o.grad_clip);
  r.validate(p, [&] { o.validate(); });
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"method", to_string(o.method)},
          {"learning_rate", o.learning_rate},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"grad_clip", o.grad_clip}};
}

struct OptimizerSlot {
  const char* name;
  OptimizerConfig PipelineConfig::*member;
};

const OptimizerSlot kOptimizerSlots[] = {
    {"identity_pretrain", &PipelineConfig::identity_pretrain},
    {"expression_pretrain", &PipelineConfig::expression_pretrain},
    {"enhancer_pretrain", &PipelineConfig::enhancer_pretrain},
    {"alg1", &PipelineConfig::alg1},
    {"alg2", &PipelineConfig::alg2},
    {"utility", &PipelineConfig::utility},
    {"attack", &PipelineConfig::attack},
};

json synthesis_json(const SynthesisSpec& s) {
  return {{"num_identities", s.num_identities},
          {"num_expressions", s.num_expressions},
          {"clips_per_pair", s.clips_per_pair},
          {"frames", s.frames},
          {"height", s.height},
          {"width", s.width},
          {"channels", s.channels},
          {"identity_pattern_scale", s.identity_pattern_scale},
          {"expression_amplitude", s.expression_amplitude},
          {"noise_std", s.noise_std},
          {"seed", s.seed}};
}

// Resolves a JSON pointer like "/a/b/key" to the parent object of `key`.
json* parent_of(json& root, const std::string& pointer, std::string& key) {
  const auto slash = pointer.find_last_of('/');
  key = pointer.substr(slash + 1);
  const std::string parent = pointer.substr(0, slash);
  try {
    json& p = parent.empty() ? root : root.at(json::json_pointer(parent));
    return p.is_object() ? &p : nullptr;
  } catch (const json::exception&) {
    return nullptr;
  }
}

// --- run directory helpers -------------------------------------------------

fs::path data_dir(const fs::path& run, const char* half) { return run / "data" / half; }
fs::path pretrained_dir(const fs::path& run) { return run / "checkpoints" / "pretrained"; }
fs::path trained_dir(const fs::path& run) { return run / "checkpoints" / "trained"; }
fs::path protected_dir(const fs::path& run, const char* half) {
  return run / "protected" / half;
}

std::string snapshot_digest(const std::string& config_text, const std::string& overrides_text) {
  const std::string both = config_text + '\0' + overrides_text;
  return sha256_hex(both.data(), both.size());
}

std::string overrides_text(const ConfigOverrides& o, const fs::path& base_dir) {
  json j = json::object();
  j["seed"] = o.seed ? json(*o.seed) : json(nullptr);
  j["variant"] = o.variant ? json(*o.variant) : json(nullptr);
  j["base_dir"] = base_dir.string();
  return j.dump(2) + "\n";
}

std::pair<ConfigOverrides, fs::path> parse_overrides(const std::string& text) {
  const json j = json::parse(text);
  ConfigOverrides o;
  if (!j.at("seed").is_null()) o.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("variant").is_null()) o.variant = j.at("variant").get<std::string>();
  return {o, fs::path(j.at("base_dir").get<std::string>())};
}

bool has_dataset(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

std::pair<Dataset, Dataset> load_split(const fs::path& run) {
  for (const char* half : {"train", "test"}) {
    if (!has_dataset(data_dir(run, half))) {
      throw IoError("run directory " + run.string() + " lacks data/" + half +
                    " (run generate first)");
    }
  }
  return {load_dataset(data_dir(run, "train")), load_dataset(data_dir(run, "test"))};
}

std::pair<Dataset, Dataset> ensure_split(const RunDirectory& run) {
  if (has_dataset(data_dir(run.root, "train")) && has_dataset(data_dir(run.root, "test"))) {
    return load_split(run.root);
  }
  return cmd_generate(run);
}

ModelHandle load_component(const fs::path& dir, const std::string& name) {
  const fs::path path = dir / (name + ".varr");
  if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string());
  return load_checkpoint(path);
}

void save_components(const fs::path& dir, const std::map<std::string, ModelHandle>& models) {
  fs::create_directories(dir);
  for (const auto& [name, m] : models) save_checkpoint(dir / (name + ".varr"), m);
}

PipelineState load_pretrained(const RunDirectory& run) {
  const fs::path dir = pretrained_dir(run.root);
  PipelineState s{run.config.pipeline.transform,
                  true,
                  run.config.pipeline.low_band_margin,
                  load_component(dir, "F_hpr"),
                  load_component(dir, "F_lpr"),
                  load_component(dir, "C_hpr"),
                  load_component(dir, "C_lpr"),
                  load_component(dir, "F_fc"),
                  load_component(dir, "C_fc"),
                  load_component(dir, "V_pl"),
                  load_component(dir, "F_u")};
  s.check_frozen();
  return s;
}

bool has_pretrained(const fs::path& run) {
  return std::all_of(std::begin(kComponents), std::end(kComponents), [&](const char* n) {
    return fs::exists(pretrained_dir(run) / (std::string(n) + ".varr"));
  });
}

VariantResult run_variant(const Variant& v, const PipelineState& pretrained, const Dataset& train,
                          const Dataset& test, PipelineConfig cfg) {
  switch (v.kind) {
    case Variant::Kind::kFull: return run_full(pretrained, train, test, cfg);
    case Variant::Kind::kTask: return run_ablation(v.task, pretrained, train, test, cfg);
    case Variant::Kind::kGaussian: return run_gaussian(v.param, pretrained, train, test, cfg);
    case Variant::Kind::kTradeoff:
      cfg.tradeoff_lambda = v.param;
      return run_tradeoff(pretrained, train, test, cfg);
    case Variant::Kind::kNone: return run_unprotected(pretrained, train, test, cfg);
  }
  throw ValidationError("unknown variant");
}

std::string output_stage(const Variant& v) {
  switch (v.kind) {
    case Variant::Kind::kFull: return to_string(Stage::kC);
    case Variant::Kind::kTask:
      return (v.task == 3 || v.task == 5 || v.task == 6) ? to_string(Stage::kG)
                                                         : to_string(Stage::kC);
    default: return "unprotected_baseline";
  }
}

std::string trace_csv(const std::map<std::string, std::vector<double>>& traces) {
  std::ostringstream out;
  out << std::setprecision(17) << "trace,epoch,value\n";
  for (const auto& [name, values] : traces) {
    for (std::size_t e = 0; e < values.size(); ++e) out << name << ',' << e << ',' << values[e] << '\n';
  }
  return out.str();
}

json digests_json(const std::map<std::string, std::string>& d) {
  json j = json::object();
  for (const auto& [k, v] : d) j[k] = v;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string Variant::id() const {
  switch (kind) {
    case Kind::kFull: return "full";
    case Kind::kTask: return "task" + std::to_string(task);
    case Kind::kGaussian: return "gaussian(" + format_number(param) + ")";
    case Kind::kTradeoff: return "tradeoff(" + format_number(param) + ")";
    case Kind::kNone: return "none";
  }
  return "?";
}

Variant Variant::parse(const std::string& text) {
  Variant v;
  auto argument = [&](const std::string& prefix) {
    const std::string body = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(body, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != body.size() || !std::isfinite(value)) {
      throw ValidationError("variant '" + text + "': bad numeric argument");
    }
    return value;
  };
  if (text == "full") return v;
  if (text == "none") {
    v.kind = Kind::kNone;
    return v;
  }
  if (text.size() == 5 && text.starts_with("task") && text[4] >= '1' && text[4] <= '6') {
    v.kind = Kind::kTask;
    v.task = text[4] - '0';
    return v;
  }
  if (text.starts_with("gaussian(") && text.ends_with(")")) {
    v.kind = Kind::kGaussian;
    v.param = argument("gaussian(");
    if (!(v.param > 0.0)) throw ValidationError("variant '" + text + "': sigma must be > 0");
    return v;
  }
  if (text.starts_with("tradeoff(") && text.ends_with(")")) {
    v.kind = Kind::kTradeoff;
    v.param = argument("tradeoff(");
    if (!(v.param >= 0.0)) throw ValidationError("variant '" + text + "': lambda must be >= 0");
    return v;
  }
  throw ValidationError("unknown variant '" + text +
                        "' (expected full, task1..task6, gaussian(s), tradeoff(l) or none)");
}

ExperimentConfig parse_experiment_config(const std::string& text, const fs::path& base_dir,
                                         const ConfigOverrides& overrides) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("config must be a JSON object");

  ExperimentConfig cfg;
  std::vector<std::string> errors;
  FieldReader r(errors, cfg.defaulted);
  r.unknown_keys(root, "", {"data", "split", "transform", "models", "optimizers", "pipeline",
                            "seeds", "variant"});

  // Seeds first: other defaults follow the global seed.
  const json& seeds = r.object(root, "", "seeds");
  r.unknown_keys(seeds, "/seeds", {"global", "shuffle", "frame"});
  std::uint64_t global = 0;
  r.field(seeds, "/seeds", "global", global);
  if (overrides.seed) global = *overrides.seed;
  cfg.pipeline.seed = global;
  if (seeds.contains("shuffle") && !seeds.at("shuffle").is_null()) {
    std::uint64_t shuffle = 0;
    r.field(seeds, "/seeds", "shuffle", shuffle);
    cfg.pipeline.shuffle_seed = shuffle;
  } else {
    cfg.defaulted.push_back("/seeds/shuffle");
  }
  cfg.pipeline.frame_seed = global;
  r.field(seeds, "/seeds", "frame", cfg.pipeline.frame_seed);

  const json& data = r.object(root, "", "data");
  r.unknown_keys(data, "/data", {"synthetic", "ingest"});
  if (data.contains("ingest")) {
    r.check(!data.contains("synthetic"), "/data: give either synthetic or ingest, not both");
    const json& in = r.object(data, "/data", "ingest");
    r.unknown_keys(in, "/data/ingest", {"root", "manifest"});
    std::string root_dir, manifest;
    r.check(in.contains("root") && in.contains("manifest"),
            "/data/ingest: root and manifest are required");
    r.field(in, "/data/ingest", "root", root_dir);
    r.field(in, "/data/ingest", "manifest", manifest);
    auto resolve = [&](const std::string& p) {
      fs::path q(p);
      return q.is_relative() ? base_dir / q : q;
    };
    cfg.ingest = IngestSource{resolve(root_dir), resolve(manifest)};
  } else {
    SynthesisSpec s;
    s.seed = global;
    const json& syn = r.object(data, "/data", "synthetic");
    const std::string p = "/data/synthetic";
    r.unknown_keys(syn, p, {"num_identities", "num_expressions", "clips_per_pair", "frames",
                            "height", "width", "channels", "identity_pattern_scale",
                            "expression_amplitude", "noise_std", "seed"});
    r.field(syn, p, "num_identities", s.num_identities);
    r.field(syn, p, "num_expressions", s.num_expressions);
    r.field(syn, p, "clips_per_pair", s.clips_per_pair);
    r.field(syn, p, "frames", s.frames);
    r.field(syn, p, "height", s.height);
    r.field(syn, p, "width", s.width);
    r.field(syn, p, "channels", s.channels);
    r.field(syn, p, "identity_pattern_scale", s.identity_pattern_scale);
    r.field(syn, p, "expression_amplitude", s.expression_amplitude);
    r.field(syn, p, "noise_std", s.noise_std);
    r.field(syn, p, "seed", s.seed);
    r.validate(p, [&] { s.validate(); });
    cfg.synthetic = s;
  }

  const json& split_obj = r.object(root, "", "split");
  r.unknown_keys(split_obj, "/split", {"test_fraction", "seed"});
  r.field(split_obj, "/split", "test_fraction", cfg.test_fraction);
  cfg.split_seed = global;
  r.field(split_obj, "/split", "seed", cfg.split_seed);
  r.check(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0,
          "/split/test_fraction: must lie in (0, 1)");

  PipelineConfig& pc = cfg.pipeline;
  const json& tr = r.object(root, "", "transform");
  r.unknown_keys(tr, "/transform", {"family", "axis", "levels", "boundary"});
  std::string family = to_string(pc.transform.family), axis = to_string(pc.transform.axis),
              boundary = to_string(pc.transform.boundary);
  r.field(tr, "/transform", "family", family);
  r.field(tr, "/transform", "axis", axis);
  r.field(tr, "/transform", "levels", pc.transform.levels);
  r.field(tr, "/transform", "boundary", boundary);
  r.validate("/transform/family", [&] { pc.transform.family = parse_family(family); });
  r.validate("/transform/axis", [&] { pc.transform.axis = parse_axis(axis); });
  r.validate("/transform/boundary", [&] { pc.transform.boundary = parse_boundary(boundary); });
  r.check(pc.transform.levels >= 1, "/transform/levels: must be >= 1");
  if (cfg.synthetic) {
    const SynthesisSpec& s = *cfg.synthetic;
    r.validate("/transform", [&] {
      pc.transform.validate({static_cast<std::size_t>(std::max(s.frames, 0)),
                             static_cast<std::size_t>(std::max(s.height, 0)),
                             static_cast<std::size_t>(std::max(s.width, 0)),
                             static_cast<std::size_t>(std::max(s.channels, 0))});
    });
  }

  const json& models = r.object(root, "", "models");
  r.unknown_keys(models, "/models", {"enhancer", "classifier", "utility"});
  auto model_width = [&](const char* role, int& width) {
    const std::string p = std::string("/models/") + role;
    const json& m = r.object(models, "/models", role);
    r.unknown_keys(m, p, {"architecture", "width"});
    std::string arch;
    r.field(m, p, "architecture", arch);
    const Role expected = std::string(role) == "utility"      ? Role::kUtility
                          : std::string(role) == "classifier" ? Role::kClassifier
                                                              : Role::kEnhancer;
    r.check(arch.empty() || arch == reference_architecture(expected),
            p + "/architecture: only " + reference_architecture(expected) + " is supported");
    r.field(m, p, "width", width);
    r.check(width >= 1, p + "/width: must be >= 1");
  };
  model_width("enhancer", pc.enhancer_width);
  model_width("classifier", pc.classifier_width);
  model_width("utility", pc.utility_width);

  const json& opts = r.object(root, "", "optimizers");
  {
    std::vector<const char*> names;
    for (const auto& slot : kOptimizerSlots) names.push_back(slot.name);
    for (const auto& [k, v] : opts.items()) {
      if (std::none_of(names.begin(), names.end(), [&](const char* n) { return k == n; })) {
        errors.push_back("/optimizers/" + k + ": unknown key");
      }
    }
  }
  for (const auto& slot : kOptimizerSlots) {
    read_optimizer(r, opts, "/optimizers", slot.name, pc.*slot.member);
  }

  const json& pl = r.object(root, "", "pipeline");
  const std::string pp = "/pipeline";
  r.unknown_keys(pl, pp, {"objective", "loss_cap", "ascent_noise", "low_band_margin",
                          "enhancer_threshold", "identity_augment_noise", "descent_slack",
                          "tradeoff_lambda", "blur_sigmas", "blur_radius"});
  std::string objective = to_string(pc.objective);
  r.field(pl, pp, "objective", objective);
  r.validate(pp + "/objective", [&] { pc.objective = parse_objective(objective); });
  r.field(pl, pp, "loss_cap", pc.loss_cap);
  r.field(pl, pp, "ascent_noise", pc.ascent_noise);
  r.field(pl, pp, "low_band_margin", pc.low_band_margin);
  r.field(pl, pp, "enhancer_threshold", pc.enhancer_threshold);
  r.field(pl, pp, "identity_augment_noise", pc.identity_augment_noise);
  r.field(pl, pp, "descent_slack", pc.descent_slack);
  r.field(pl, pp, "tradeoff_lambda", pc.tradeoff_lambda);
  r.field(pl, pp, "blur_sigmas", pc.blur_sigmas);
  r.field(pl, pp, "blur_radius", pc.blur_radius);
  r.validate(pp, [&] { pc.validate(); });

  std::string variant = "full";
  r.field(root, "", "variant", variant);
  if (overrides.variant) variant = *overrides.variant;
  r.validate("/variant", [&] { cfg.variant = Variant::parse(variant); });
  if (cfg.variant.kind == Variant::Kind::kTradeoff) pc.tradeoff_lambda = cfg.variant.param;

  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return cfg;
}

std::string ExperimentConfig::snapshot() const {
  const PipelineConfig& pc = pipeline;
  json j;
  if (synthetic) {
    j["data"]["synthetic"] = synthesis_json(*synthetic);
  } else {
    j["data"]["ingest"] = {{"root", ingest->root.string()},
                           {"manifest", ingest->manifest.string()}};
  }
  j["split"] = {{"test_fraction", test_fraction}, {"seed", split_seed}};
  j["transform"] = {{"family", to_string(pc.transform.family)},
                    {"axis", to_string(pc.transform.axis)},
                    {"levels", pc.transform.levels},
                    {"boundary", to_string(pc.transform.boundary)}};
  j["models"] = {
      {"enhancer", {{"architecture", "encdec2d"}, {"width", pc.enhancer_width}}},
      {"classifier", {{"architecture", "framecnn"}, {"width", pc.classifier_width}}},
      {"utility", {{"architecture", "clipcnn3d"}, {"width", pc.utility_width}}}};
  for (const auto& slot : kOptimizerSlots) j["optimizers"][slot.name] = optimizer_json(pc.*slot.member);
  j["pipeline"] = {{"objective", to_string(pc.objective)},
                   {"loss_cap", pc.loss_cap},
                   {"ascent_noise", pc.ascent_noise},
                   {"low_band_margin", pc.low_band_margin},
                   {"enhancer_threshold", pc.enhancer_threshold},
                   {"identity_augment_noise", pc.identity_augment_noise},
                   {"descent_slack", pc.descent_slack},
                   {"tradeoff_lambda", pc.tradeoff_lambda},
                   {"blur_sigmas", pc.blur_sigmas},
                   {"blur_radius", pc.blur_radius}};
  j["seeds"] = {{"global", pc.seed},
                {"shuffle", pc.shuffle_seed ? json(*pc.shuffle_seed) : json(nullptr)},
                {"frame", pc.frame_seed}};
  j["variant"] = variant.id();

  for (const std::string& pointer : defaulted) {
    std::string key;
    json* parent = parent_of(j, pointer, key);
    if (!parent) continue;
    if (parent == &j) {
      j["non_paper_defaults"].push_back(key);
      continue;
    }
    (*parent)["non_paper_default"] = true;
    (*parent)["defaulted"].push_back(key);
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

RunDirectory init_run_directory(const fs::path& config_path, const fs::path& out,
                                const ConfigOverrides& overrides) {
  const std::string text = read_file(config_path);
  const fs::path base_dir = fs::absolute(config_path).parent_path();
  RunDirectory run{out, parse_experiment_config(text, base_dir, overrides)};
  const std::string otext = overrides_text(overrides, base_dir);
  const std::string digest = snapshot_digest(text, otext);
  if (fs::exists(out / "config.sha256")) {
    if (read_file(out / "config.sha256") != digest + "\n") {
      throw ValidationError("run directory " + out.string() +
                            " was created from a different config; use a fresh --out");
    }
    return run;
  }
  fs::create_directories(out);
  write_file(out / "config.json", text);
  write_file(out / "overrides.json", otext);
  write_file(out / "config.resolved.json", run.config.snapshot());
  write_file(out / "config.sha256", digest + "\n");
  return run;
}

RunDirectory open_run_directory(const fs::path& dir) {
  for (const char* f : {"config.json", "overrides.json", "config.sha256"}) {
    if (!fs::exists(dir / f)) throw IoError("run directory " + dir.string() + " lacks " + f);
  }
  const std::string text = read_file(dir / "config.json");
  const std::string otext = read_file(dir / "overrides.json");
  if (read_file(dir / "config.sha256") != snapshot_digest(text, otext) + "\n") {
    throw InvariantViolation("config snapshot in " + dir.string() +
                             " does not match its digest; refusing to evaluate");
  }
  const auto [overrides, base_dir] = parse_overrides(otext);
  return {dir, parse_experiment_config(text, base_dir, overrides)};
}

std::pair<Dataset, Dataset> cmd_generate(const RunDirectory& run) {
  const ExperimentConfig& c = run.config;
  Dataset all = c.synthetic ? generate_synthetic(*c.synthetic)
                            : ingest_directory(c.ingest->root, c.ingest->manifest);
  auto halves = split(all, c.test_fraction, c.split_seed);
  save_dataset(data_dir(run.root, "train"), halves.first);
  save_dataset(data_dir(run.root, "test"), halves.second);
  return halves;
}

PipelineState cmd_pretrain(const RunDirectory& run) {
  const auto [train, test] = ensure_split(run);
  PretrainReport report;
  PipelineState s = pretrain_components(train, run.config.pipeline, &report);
  save_components(pretrained_dir(run.root), component_models(s, s.utility));
  json j;
  j["identity_accuracy"] = report.identity_accuracy;
  j["expression_accuracy"] = report.expression_accuracy;
  j["enhancer_loss"] = report.enhancer_loss;
  j["enhancer_converged"] = report.enhancer_converged;
  j["compensator_loss"] = report.compensator_loss;
  j["identity_digest"] = report.identity_digest;
  j["frozen_digests"] = digests_json(s.frozen_digests());
  write_file(pretrained_dir(run.root) / "pretrain.json", j.dump(2) + "\n");
  return s;
}

TrainOutcome cmd_train(const RunDirectory& run) {
  const auto [train, test] = ensure_split(run);
  const PipelineState pretrained =
      has_pretrained(run.root) ? load_pretrained(run) : cmd_pretrain(run);
  TrainOutcome out{run_variant(run.config.variant, pretrained, train, test, run.config.pipeline),
                   pretrained.frozen_digests(),
                   {}};
  for (const char* name : kFrozenComponents) {
    out.digests_after[name] = param_digest(out.result.models.at(name));
  }
  const bool unchanged = out.digests_before == out.digests_after;
  json dj;
  dj["before"] = digests_json(out.digests_before);
  dj["after"] = digests_json(out.digests_after);
  dj["unchanged"] = unchanged;
  write_file(run.root / "digests.json", dj.dump(2) + "\n");
  if (!unchanged) {
    throw InvariantViolation("a frozen controller or validator changed during training");
  }

  const VariantResult& v = out.result;
  save_components(trained_dir(run.root), v.models);
  const json stage = {{"variant", run.config.variant.id()},
                      {"stage", output_stage(run.config.variant)}};
  for (const char* half : {"train", "test"}) {
    const fs::path dir = protected_dir(run.root, half);
    save_dataset(dir, std::string(half) == "train" ? v.train_output : v.test_output);
    write_file(dir / "stage.json", stage.dump(2) + "\n");
  }
  if (v.stage_g_test.size() > 0) {
    const json g = {{"variant", run.config.variant.id()}, {"stage", to_string(Stage::kG)}};
    for (const char* half : {"train", "test"}) {
      const fs::path dir = run.root / "protected" / "stage_g" / half;
      save_dataset(dir, std::string(half) == "train" ? v.stage_g_train : v.stage_g_test);
      write_file(dir / "stage.json", g.dump(2) + "\n");
    }
  }
  json metrics;
  metrics["variant"] = run.config.variant.id();
  metrics["report"] = json::parse(to_json(v.report));
  metrics["extras"] = v.extras;
  metrics["frozen_digests"] = digests_json(out.digests_after);
  write_file(run.root / "metrics.json", metrics.dump(2) + "\n");
  write_file(run.root / "loss_trace.csv", trace_csv(v.traces));
  return out;
}

PrivacyReport cmd_evaluate(const fs::path& run_dir) {
  const RunDirectory run = open_run_directory(run_dir);
  const ModelHandle validator = load_component(trained_dir(run_dir), "V_pl");
  const ModelHandle utility = load_component(trained_dir(run_dir), "F_u");
  if (!has_dataset(protected_dir(run_dir, "test"))) {
    throw IoError("run directory " + run_dir.string() + " lacks protected/test (run train first)");
  }
  const Dataset test = load_dataset(protected_dir(run_dir, "test"));
  const auto plr = privacy_leakage_ratio(validator, test.clips, test.num_identities,
                                         run.config.pipeline.frame_seed);
  const auto acc = accuracy(utility, test.clips, LabelField::kExpression);
  PrivacyReport report =
      make_privacy_report(run.config.variant.id(), run.config.pipeline.seed, plr, acc);
  report.validate();
  write_file(run_dir / "evaluation.json", to_json(report) + "\n");
  write_file(run_dir / "evaluation.csv", render_csv({table_row(report)}));
  return report;
}

ThreatReport cmd_attack(const fs::path& run_dir) {
  const RunDirectory run = open_run_directory(run_dir);
  const auto [orig_train, orig_test] = load_split(run_dir);
  for (const char* half : {"train", "test"}) {
    if (!has_dataset(protected_dir(run_dir, half))) {
      throw IoError("run directory " + run_dir.string() + " lacks protected/" + half);
    }
  }
  const Dataset prot_train = load_dataset(protected_dir(run_dir, "train"));
  const Dataset prot_test = load_dataset(protected_dir(run_dir, "test"));
  const ModelHandle validator = load_component(trained_dir(run_dir), "V_pl");
  ThreatReport t = run_threat_attack(run.config.variant.id(), prot_train, orig_train, prot_test,
                                     orig_test, validator, run.config.pipeline);
  write_file(run_dir / "threat.json", to_json(t) + "\n");
  return t;
}

std::vector<TableRow> cmd_ablate(const fs::path& config_path, const std::vector<int>& tasks,
                                 const fs::path& out, const ConfigOverrides& overrides) {
  std::set<int> unique(tasks.begin(), tasks.end());
  for (int t : unique) {
    if (t < 1 || t > 6) throw ValidationError("ablation task ids must lie in 1..6");
  }
  ConfigOverrides full_overrides = overrides;
  full_overrides.variant = "full";
  const RunDirectory full = init_run_directory(config_path, out / "full", full_overrides);
  std::vector<TableRow> rows{table_row(cmd_train(full).result.report)};
  for (int t : unique) {
    ConfigOverrides o = overrides;
    o.variant = "task" + std::to_string(t);
    const RunDirectory run = init_run_directory(config_path, out / *o.variant, o);
    // Share the split and the pretrained components of the full run.
    fs::create_directories(run.root / "checkpoints");
    fs::copy(full.root / "data", run.root / "data",
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::copy(pretrained_dir(full.root), pretrained_dir(run.root),
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    rows.push_back(table_row(cmd_train(run).result.report));
  }
  write_file(out / "ablation.csv", render_csv(rows));
  return rows;
}

std::vector<TableRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& csv_out,
                                 const std::optional<fs::path>& plot_out) {
  if (run_dirs.empty()) throw ValidationError("report: no run directories given");
  std::vector<TableRow> rows;
  for (const fs::path& dir : run_dirs) {
    bool any = false;
    // Recovered-clip PLR lives in threat.json; the table keeps the protected PLR.
    if (fs::exists(dir / "threat.json")) {
      rows.push_back(table_row(threat_report_from_json(read_file(dir / "threat.json"))));
      any = true;
    }
    if (fs::exists(dir / "metrics.json")) {
      const json m = read_json(dir / "metrics.json");
      const PrivacyReport r = privacy_report_from_json(m.at("report").dump());
      rows.push_back(table_row(r));
      any = true;
    }
    if (fs::exists(dir / "evaluation.json")) {
      const PrivacyReport r = privacy_report_from_json(read_file(dir / "evaluation.json"));
      rows.push_back(table_row(r));
      any = true;
    }
    if (!any) {
      throw IoError("run directory " + dir.string() +
                    " has no metrics.json, evaluation.json or threat.json");
    }
  }
  auto merged = assemble_report(rows);
  write_file(csv_out, render_csv(merged));
  if (plot_out) write_bar_chart(*plot_out, merged);
  return merged;
}

}  // namespace veil
