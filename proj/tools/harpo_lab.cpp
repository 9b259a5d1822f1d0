#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harpo/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"harpo_lab: multitask RL experiments with advantage modulation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs/out";
  std::string runs_dir;
  std::string figure;
  std::vector<std::string> overrides;
  std::vector<std::string> variants;

  CLI::App* train = app.add_subcommand("train", "Run one training configuration");
  train->add_option("config", config_path, "Config file (JSON)")->required();
  train->add_option("-o,--out", out_dir, "Output directory");
  train->add_option("--override", overrides, "key=value config overrides (dotted paths)");

  CLI::App* ablate = app.add_subcommand("ablate", "Run HARPO and its three ablations");
  ablate->add_option("config", config_path, "Config file (JSON)")->required();
  ablate->add_option("-o,--out", out_dir, "Output directory");
  ablate->add_option("--override", overrides, "key=value config overrides");

  CLI::App* compare = app.add_subcommand("compare", "Run several estimators on one suite");
  compare->add_option("config", config_path, "Config file (JSON)")->required();
  compare->add_option("-o,--out", out_dir, "Output directory");
  compare->add_option("--variants", variants, "Estimator variants (default: harpo grpo)");
  compare->add_option("--override", overrides, "key=value config overrides");

  CLI::App* report = app.add_subcommand("report", "Export plot data from completed runs");
  report->add_option("runs", runs_dir, "Directory holding completed runs")->required();
  report->add_option("figure", figure, "relative_advantage | factor_geomean | advantage_hist")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    return harpo::cli::cmd_train(config_path, out_dir, overrides, std::cout, std::cerr);
  }
  if (ablate->parsed()) {
    return harpo::cli::cmd_ablate(config_path, out_dir, overrides, std::cout, std::cerr);
  }
  if (compare->parsed()) {
    return harpo::cli::cmd_compare(config_path, out_dir, variants, overrides, std::cout,
                                   std::cerr);
  }
  return harpo::cli::cmd_report(runs_dir, figure, std::cout, std::cerr);
}
