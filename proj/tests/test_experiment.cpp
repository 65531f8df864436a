#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "veil/error.hpp"
#include "veil/experiment.hpp"

namespace veil {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("veil_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tiny_config_json() {
  json opt = {{"epochs", 2}, {"batch_size", 4}};
  return {{"data",
           {{"synthetic",
             {{"num_identities", 3},
              {"num_expressions", 2},
              {"clips_per_pair", 2},
              {"frames", 4},
              {"height", 8},
              {"width", 8}}}}},
          {"split", {{"test_fraction", 0.5}}},
          {"models",
           {{"enhancer", {{"width", 2}}},
            {"classifier", {{"width", 2}}},
            {"utility", {{"width", 2}}}}},
          {"optimizers",
           {{"identity_pretrain", opt},
            {"expression_pretrain", opt},
            {"enhancer_pretrain", opt},
            {"alg1", opt},
            {"alg2", opt},
            {"utility", opt},
            {"attack", {{"epochs", 1}}}}},
          {"pipeline", {{"blur_sigmas", {1.0}}}},
          {"seeds", {{"global", 4}}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "c.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

TEST(Variant, ParsesAndPrintsIds) {
  for (const char* id : {"full", "none", "task1", "task6", "gaussian(1.5)", "tradeoff(0.2)"}) {
    EXPECT_EQ(Variant::parse(id).id(), id);
  }
  EXPECT_EQ(Variant::parse("task4").task, 4);
  EXPECT_DOUBLE_EQ(Variant::parse("gaussian(2)").param, 2.0);
  for (const char* bad : {"task0", "task7", "gaussian()", "gaussian(-1)", "gaussian(x)",
                          "tradeoff(-0.5)", "blur"}) {
    EXPECT_THROW(Variant::parse(bad), ValidationError) << bad;
  }
}

TEST(Config, DefaultsAreAnnotated) {
  const auto cfg = parse_experiment_config(tiny_config_json().dump());
  ASSERT_TRUE(cfg.synthetic);
  EXPECT_EQ(cfg.synthetic->num_identities, 3);
  EXPECT_EQ(cfg.synthetic->seed, 4u);
  EXPECT_EQ(cfg.pipeline.seed, 4u);
  EXPECT_EQ(cfg.split_seed, 4u);
  EXPECT_EQ(cfg.pipeline.alg1.epochs, 2);
  EXPECT_EQ(cfg.variant.kind, Variant::Kind::kFull);

  const json snap = json::parse(cfg.snapshot());
  EXPECT_TRUE(snap["data"]["synthetic"]["non_paper_default"].get<bool>());
  const auto& d = snap["data"]["synthetic"]["defaulted"];
  EXPECT_NE(std::find(d.begin(), d.end(), "noise_std"), d.end());
  EXPECT_EQ(std::find(d.begin(), d.end(), "frames"), d.end());
  EXPECT_TRUE(snap["optimizers"]["alg1"]["non_paper_default"].get<bool>());
  EXPECT_TRUE(snap["transform"]["non_paper_default"].get<bool>());
  EXPECT_EQ(snap["variant"], "full");
}

TEST(Config, ListsEveryViolation) {
  json j = tiny_config_json();
  j["data"]["synthetic"]["frames"] = 1;
  j["data"]["synthetic"]["colour"] = 1;
  j["optimizers"]["alg1"]["epochs"] = 0;
  j["optimizers"]["alg1"]["learning_rate"] = "fast";
  j["pipeline"]["objective"] = "maximize";
  j["variant"] = "task8";
  try {
    parse_experiment_config(j.dump());
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"/data/synthetic/colour", "frames", "/optimizers/alg1/learning_rate",
                               "epochs", "/pipeline/objective", "task8"}) {
      EXPECT_NE(msg.find(needle), std::string::npos) << needle << "\n" << msg;
    }
  }
  EXPECT_THROW(parse_experiment_config("{not json"), ValidationError);
  EXPECT_THROW(parse_experiment_config("[1, 2]"), ValidationError);
}

TEST(Config, OverridesAndIngestPaths) {
  json j = tiny_config_json();
  j["seeds"]["shuffle"] = 9;
  ConfigOverrides o;
  o.seed = 21;
  o.variant = "tradeoff(0.5)";
  const auto cfg = parse_experiment_config(j.dump(), {}, o);
  EXPECT_EQ(cfg.pipeline.seed, 21u);
  EXPECT_EQ(cfg.pipeline.shuffle_seed, 9u);
  EXPECT_EQ(cfg.split_seed, 21u);
  EXPECT_DOUBLE_EQ(cfg.pipeline.tradeoff_lambda, 0.5);

  json in = {{"data", {{"ingest", {{"root", "clips"}, {"manifest", "clips/manifest.json"}}}}}};
  const auto ic = parse_experiment_config(in.dump(), "/data/set");
  ASSERT_TRUE(ic.ingest);
  EXPECT_EQ(ic.ingest->root, fs::path("/data/set/clips"));
  EXPECT_EQ(ic.ingest->manifest, fs::path("/data/set/clips/manifest.json"));
  in["data"]["synthetic"] = json::object();
  EXPECT_THROW(parse_experiment_config(in.dump()), ValidationError);
}

TEST(RunDirectory, RefusesTamperedSnapshot) {
  const auto dir = scratch("tamper");
  const auto cfg_path = write_config(dir, tiny_config_json());
  const auto run = init_run_directory(cfg_path, dir / "run");
  EXPECT_EQ(slurp(run.root / "config.json"), slurp(cfg_path));
  EXPECT_NO_THROW(open_run_directory(run.root));
  EXPECT_NO_THROW(init_run_directory(cfg_path, dir / "run"));

  json other = tiny_config_json();
  other["seeds"]["global"] = 5;
  EXPECT_THROW(init_run_directory(write_config(dir, other, "d.json"), dir / "run"),
               ValidationError);

  std::ofstream(run.root / "config.json", std::ios::app) << "\n";
  EXPECT_THROW(open_run_directory(run.root), InvariantViolation);
}

TEST(RunDirectory, MissingArtifactsAreNamed) {
  const auto dir = scratch("missing");
  try {
    cmd_evaluate(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("config.json"), std::string::npos);
  }
  const auto run = init_run_directory(write_config(dir, tiny_config_json()), dir / "run");
  try {
    cmd_attack(run.root);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("data/train"), std::string::npos) << e.what();
  }
}

TEST(Commands, TrainTwiceGivesIdenticalArtifacts) {
  const auto dir = scratch("determinism");
  const auto cfg_path = write_config(dir, tiny_config_json());
  const auto a = cmd_train(init_run_directory(cfg_path, dir / "a"));
  const auto b = cmd_train(init_run_directory(cfg_path, dir / "b"));
  EXPECT_EQ(a.digests_before, a.digests_after);
  for (const char* f : {"metrics.json", "loss_trace.csv", "digests.json",
                        "checkpoints/trained/F_fc.varr", "protected/test/clips/000000.varr",
                        "protected/stage_g/test/clips/000000.varr"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(json::parse(slurp(dir / "a" / "protected/test/stage.json"))["stage"], "C");

  // Re-running in the same directory reproduces the artifacts.
  const std::string before = slurp(dir / "a" / "metrics.json");
  cmd_train(init_run_directory(cfg_path, dir / "a"));
  EXPECT_EQ(slurp(dir / "a" / "metrics.json"), before);

  const auto eval = cmd_evaluate(dir / "a");
  EXPECT_DOUBLE_EQ(eval.plr, a.result.report.plr);
  EXPECT_DOUBLE_EQ(eval.utility_accuracy, a.result.report.utility_accuracy);
  const auto threat = cmd_attack(dir / "a");
  EXPECT_EQ(threat.method_id, "full");
  EXPECT_TRUE(fs::exists(dir / "a" / "threat.json"));

  const auto rows = cmd_report({dir / "a"}, dir / "report.csv", dir / "report.png");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(*rows[0].plr, a.result.report.plr);
  EXPECT_DOUBLE_EQ(*rows[0].ssim, threat.ssim);
  EXPECT_EQ(slurp(dir / "report.png").substr(1, 3), "PNG");
}

// Zero-parameter architecture wrapping the template oracle so it can live in
// a run directory as a checkpoint.
void register_oracle(const SynthesisSpec& spec) {
  register_architecture("template_oracle", [spec](Role, const ShapeSpec&) {
    return std::make_shared<const testing::TemplateMatcher>(testing::identity_templates(spec));
  });
}

TEST(Commands, OracleValidatorOnUnprotectedRun) {
  const auto dir = scratch("oracle");
  json j = tiny_config_json();
  j["data"]["synthetic"]["expression_amplitude"] = 0.0;
  j["variant"] = "none";
  const auto run = init_run_directory(write_config(dir, j), dir / "run");
  cmd_train(run);

  const SynthesisSpec& spec = *run.config.synthetic;
  register_oracle(spec);
  ModelHandle oracle =
      freeze(make_model(Role::kClassifier, "template_oracle", {{8, 8, 1}, spec.num_identities, 1}, 0));
  save_checkpoint(run.root / "checkpoints/trained/V_pl.varr", oracle);
  const auto report = cmd_evaluate(run.root);
  EXPECT_DOUBLE_EQ(report.plr, 1.0);
  EXPECT_EQ(report.variant_id, "none");
  const auto rows = parse_csv(slurp(run.root / "evaluation.csv"));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(*rows[0].plr, 1.0);
}

TEST(Commands, AblateSharesPretrainingAndWritesTable) {
  const auto dir = scratch("ablate");
  const auto rows = cmd_ablate(write_config(dir, tiny_config_json()), {2, 5, 6}, dir / "out");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].variant, "full");
  EXPECT_EQ(rows[1].variant, "task2");
  EXPECT_EQ(rows[3].variant, "task6");
  EXPECT_EQ(parse_csv(slurp(dir / "out" / "ablation.csv")).size(), 4u);
  for (const char* t : {"task2", "task5", "task6"}) {
    EXPECT_EQ(slurp(dir / "out" / t / "checkpoints/pretrained/V_pl.varr"),
              slurp(dir / "out" / "full" / "checkpoints/pretrained/V_pl.varr"));
  }
  EXPECT_THROW(cmd_ablate(dir / "c.json", {0}, dir / "bad"), ValidationError);
}

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(VEIL_CLI) + " " + args + " 2>" + err.string() + " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodesAndStructuredErrors) {
  const auto dir = scratch("cli");
  json bad = tiny_config_json();
  bad["split"]["test_fraction"] = 2.0;
  bad["variant"] = "task9";
  const auto bad_path = write_config(dir, bad, "bad.json");
  EXPECT_EQ(run_cli("generate --config " + bad_path.string() + " --out " + (dir / "r").string(),
                    dir / "err.txt"),
            2);
  const json err = json::parse(slurp(dir / "err.txt"));
  EXPECT_EQ(err["error"], "validation_error");
  EXPECT_NE(err["message"].get<std::string>().find("test_fraction"), std::string::npos);
  EXPECT_NE(err["message"].get<std::string>().find("task9"), std::string::npos);

  EXPECT_EQ(run_cli("evaluate " + (dir / "nothing").string(), dir / "err2.txt"), 3);

  const auto good = write_config(dir, tiny_config_json());
  EXPECT_EQ(run_cli("generate --config " + good.string() + " --out " + (dir / "g").string(),
                    dir / "err3.txt"),
            0);
  EXPECT_TRUE(fs::exists(dir / "g" / "data" / "train" / "manifest.json"));
  EXPECT_EQ(run_cli("train --config " + good.string() + " --out " + (dir / "g").string() +
                        " --seed 99",
                    dir / "err4.txt"),
            2);
}

}  // namespace
}  // namespace veil
