#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "harpo/advantage.hpp"
#include "harpo/config.hpp"
#include "harpo/objective.hpp"
#include "harpo/policy.hpp"
#include "harpo/synthetic_env.hpp"
#include "json.hpp"

namespace harpo::trainer {

struct TaskStepMetrics {
  double mean_reward = 0.0;
  double mean_abs_adv = 0.0;      // pre-modulation
  double mean_abs_mod_adv = 0.0;  // post-modulation
  double mod_adv_std = 0.0;       // population std of modulated advantages
  double group_mag_std = 0.0;     // std across groups of mean |modulated|
  double rel_task_adv = 1.0;      // mean|A| over the cross-task mean of the same
  double s_task = 1.0;
  double sample_log_factor_sum = 0.0;
  double contribution_signal = 0.0;  // smoothed p_bar for this task
};

struct StepMetrics {
  std::int64_t step = 0;
  std::map<std::string, TaskStepMetrics> tasks;
  double s_task_geomean = 1.0;
  objective::ObjectiveReport objective;
  double mean_rollout_len = 0.0;
  int max_rollout_len = 0;
};

/// Flat key -> value map, one record per step (JSONL line).
nlohmann::json metrics_record(const StepMetrics& metrics, const std::string& run_id,
                              const std::string& variant, std::uint64_t seed);

struct AdvantageDumpRow {
  std::int64_t step = 0;
  std::string task_id;
  std::string sample_id;
  double normalized = 0.0;
  double modulated = 0.0;
};

struct ValidationPoint {
  std::int64_t step = 0;
  std::map<std::string, double> per_task;
  double mean = 0.0;
  bool improved = false;
};

struct Checkpoint {
  std::int64_t step = 0;
  policy::PolicyParams params;
  policy::PolicyParams best_params;
  objective::AdamState opt;
  adv::ModulationState mod;
  double best_mean = 0.0;
  std::int64_t best_step = -1;
  int bad_streak = 0;
  nlohmann::json config_echo;
};

nlohmann::json to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const ValidationPoint&)> on_validation;
  std::function<void(const Checkpoint&, bool is_best)> on_checkpoint;
  std::function<void(const std::vector<AdvantageDumpRow>&)> on_advantages;
};

struct TrainResult {
  policy::PolicyParams params;
  policy::PolicyParams best_params;
  std::int64_t best_step = -1;
  std::int64_t stopped_at_step = 0;
  bool early_stopped = false;
  std::vector<StepMetrics> history;
  std::vector<ValidationPoint> validations;
  std::map<std::string, double> final_oracle;  // oracle rewards at best_params
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Full on-policy loop: snapshot, stratified batch, rollouts, rewards, group
/// normalization, variant modulation, mini-batch AdamW passes, oracle-based
/// validation with patience early stopping. Deterministic for a fixed config.
TrainResult train(const RunConfig& config, const TrainHooks& hooks = {});

/// Continues a checkpointed run; reproduces the remaining metrics history
/// bit-exactly (counter-based RNG, optimizer and modulation state restored).
TrainResult train_resume(const Checkpoint& ck, const TrainHooks& hooks = {});

struct VariantSummary {
  std::string variant;
  std::string run_id;
  double min_final_task_oracle = 0.0;
  std::vector<double> factor_geomean_trace;
  std::vector<double> mod_adv_dispersion_trace;  // std across tasks of mean|A^H|
};

struct ComparisonReport {
  std::vector<TrainResult> results;
  std::vector<VariantSummary> summaries;
};

/// Runs configs sharing suite and seed (differing in estimator variant only).
ComparisonReport compare(const std::vector<RunConfig>& configs, const TrainHooks& hooks = {});

}  // namespace harpo::trainer
