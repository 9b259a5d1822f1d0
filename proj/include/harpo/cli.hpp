#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "harpo/config.hpp"
#include "harpo/trainer.hpp"

namespace harpo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeAbort = 3;

/// Config file + HARPO_LAB_SEED env + --override flags, in that precedence
/// order. Throws std::invalid_argument / std::runtime_error on bad input.
RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides);

/// One training run into out_dir: config echo, JSONL metrics/validation/
/// advantage streams, latest and best checkpoints, summary table.
trainer::TrainResult run_one(const RunConfig& config, const std::string& out_dir);

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

/// HARPO plus the three ablations on the shared suite and seed, then a
/// cross-variant rank table (per-task ranks, ties averaged, mean rank).
int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

int cmd_compare(const std::string& config_path, const std::string& out_dir,
                const std::vector<std::string>& variants,
                const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

/// Plot-ready data export over completed runs. Figures: relative_advantage,
/// factor_geomean, advantage_hist.
int cmd_report(const std::string& runs_dir, const std::string& figure, std::ostream& out,
               std::ostream& err);

/// Ranks per task with ties averaged (1 = best), plus the cross-task mean.
/// Exposed for tests.
std::vector<double> average_ranks(const std::vector<double>& values_desc_better);

}  // namespace harpo::cli
