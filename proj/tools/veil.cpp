#include <CLI11.hpp>

#include <iostream>

#include <nlohmann/json.hpp>

#include "veil/error.hpp"
#include "veil/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ErrorKind {
  const char* name;
  int code;
};

ErrorKind classify(const std::exception& e) {
  if (dynamic_cast<const veil::ValidationError*>(&e)) return {"validation_error", 2};
  if (dynamic_cast<const veil::IoError*>(&e)) return {"io_error", 3};
  if (dynamic_cast<const veil::InvariantViolation*>(&e)) return {"invariant_violation", 4};
  if (dynamic_cast<const veil::ShapeError*>(&e)) return {"shape_error", 5};
  if (dynamic_cast<const veil::NumericalError*>(&e)) return {"numerical_error", 6};
  return {"internal_error", 1};
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

json row_json(const veil::TableRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"variant", r.variant}, {"plr", opt(r.plr)}, {"acc", opt(r.acc)},
          {"ssim", opt(r.ssim)},  {"psnr", opt(r.psnr)}, {"chance", opt(r.chance)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-split identity removal for video clips"};
  app.require_subcommand(1);

  std::string config, out, variant, csv = "report.csv", plot;
  std::uint64_t seed = 0;
  std::vector<int> tasks{1, 2, 3, 4, 5, 6};
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Experiment config (JSON)")->required();
    cmd->add_option("--out", out, "Run directory")->required();
    cmd->add_option("--seed", seed, "Override the global seed");
    cmd->add_option("--variant", variant, "full, task1..task6, gaussian(s), tradeoff(l) or none");
  };
  auto* generate = app.add_subcommand("generate", "Generate or ingest the dataset and split it");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain controllers, validator and enhancers");
  auto* train = app.add_subcommand("train", "Train one variant and write protected clips");
  for (auto* cmd : {generate, pretrain, train}) add_common(cmd);

  auto* evaluate = app.add_subcommand("evaluate", "Score the protected test clips of a run");
  auto* attack = app.add_subcommand("attack", "Train the recovery attack against a run");
  for (auto* cmd : {evaluate, attack}) {
    cmd->add_option("--out,run_dir", out, "Run directory")->required();
  }

  auto* ablate = app.add_subcommand("ablate", "Full pipeline plus ablation tasks");
  add_common(ablate);
  ablate->add_option("--tasks", tasks, "Task ids in 1..6")->delimiter(',');

  auto* report = app.add_subcommand("report", "Merge run metrics into one table");
  report->add_option("run_dirs", run_dirs, "Run directories")->required();
  report->add_option("--csv", csv, "Output CSV path");
  report->add_option("--plot", plot, "Optional PNG bar chart of PLR and ACC");

  CLI11_PARSE(app, argc, argv);

  veil::ConfigOverrides overrides;
  for (auto* cmd : {generate, pretrain, train, ablate}) {
    if (!cmd->parsed()) continue;
    if (cmd->count("--seed")) overrides.seed = seed;
    if (cmd->count("--variant")) overrides.variant = variant;
  }

  try {
    if (generate->parsed()) {
      const auto run = veil::init_run_directory(config, out, overrides);
      const auto [tr, te] = veil::cmd_generate(run);
      print({{"train_clips", tr.size()}, {"test_clips", te.size()}, {"run_dir", out}});
    } else if (pretrain->parsed()) {
      const auto s = veil::cmd_pretrain(veil::init_run_directory(config, out, overrides));
      print({{"frozen_digests", s.frozen_digests()}, {"run_dir", out}});
    } else if (train->parsed()) {
      const auto t = veil::cmd_train(veil::init_run_directory(config, out, overrides));
      print(json::parse(veil::to_json(t.result.report)));
    } else if (evaluate->parsed()) {
      print(json::parse(veil::to_json(veil::cmd_evaluate(out))));
    } else if (attack->parsed()) {
      print(json::parse(veil::to_json(veil::cmd_attack(out))));
    } else if (ablate->parsed()) {
      json rows = json::array();
      for (const auto& r : veil::cmd_ablate(config, tasks, out, overrides)) rows.push_back(row_json(r));
      print(rows);
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      std::optional<fs::path> plot_path;
      if (!plot.empty()) plot_path = plot;
      json rows = json::array();
      for (const auto& r : veil::cmd_report(dirs, csv, plot_path)) rows.push_back(row_json(r));
      print(rows);
    }
  } catch (const std::exception& e) {
    const ErrorKind kind = classify(e);
    std::cerr << json{{"error", kind.name}, {"message", e.what()}}.dump() << '\n';
    return kind.code;
  }
  return 0;
}
