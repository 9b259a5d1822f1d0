#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harpo/advantage.hpp"
#include "harpo/objective.hpp"
#include "harpo/rewards.hpp"
#include "harpo/synthetic_env.hpp"
#include "json.hpp"

namespace harpo {

struct SuiteConfig {
  std::string preset = "heterogeneous";
  int instances_per_task = 128;
  int answer_tokens = 4;
  std::vector<env::TaskSpec> tasks;  // when nonempty, overrides the preset
};

/// Every scalar the run depends on. Serialized as the config echo; a config
/// echo fed back reproduces the run.
struct RunConfig {
  std::string run_id;  // derived from preset/estimator/seed when empty
  adv::Variant estimator = adv::Variant::kHarpo;
  std::uint64_t seed = 1;
  SuiteConfig suite;

  double epsilon = 1e-6;  // group-normalization epsilon
  double beta_rho = 0.95;
  double beta_s = 0.95;
  adv::ReferenceSource reference_source = adv::ReferenceSource::kSmoothed;
  double factor_s_min = 0.0;  // clamp disabled when s_max <= 0
  double factor_s_max = 0.0;

  double clip_eps = 0.2;
  double kl_beta = 0.0;
  int group_size = 5;
  int effective_batch = 64;
  int mini_batch = 32;
  int passes_per_batch = 1;

  objective::AdamConfig optimizer;

  double w_fmt = 0.2;
  double lambda_len = 0.75;
  rewards::LengthPenaltyParams length;

  int policy_max_len = 12;
  int policy_buckets = 12;
  int oracle_state_bound = 4096;

  int validation_every = 50;
  int patience = 5;
  int max_epochs = 75;
  int dump_advantages_every = 50;
  std::vector<double> task_weights;  // empty = uniform stratification

  std::string effective_run_id() const;
  int steps_per_epoch(int n_tasks) const;
  int max_steps(int n_tasks) const;
  void validate() const;
  adv::ModulationConfig modulation_config() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies a flat `key=value` override using dotted key paths into the config
/// JSON (e.g. "estimator=grpo", "optimizer.lr=0.001"). Unknown keys error.
void apply_override(nlohmann::json& config_json, const std::string& spec);

env::Suite build_suite(const RunConfig& config);

}  // namespace harpo
