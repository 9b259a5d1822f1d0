#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "harpo/policy.hpp"
#include "json.hpp"

namespace harpo::objective {

struct SurrogateTerm {
  double ratio = 1.0;          // phi, > 0
  double clipped_value = 0.0;  // min(phi*A, clip(phi, 1-eps, 1+eps)*A)
  double advantage_used = 0.0;
};

struct ObjectiveReport {
  double surrogate_mean = 0.0;
  double kl_term = 0.0;
  double total = 0.0;  // surrogate_mean - beta * kl_term
  std::map<std::string, double> per_task_breakdown;
};

/// exp(new_logp - old_logp); errors on a non-finite result.
double importance_ratio(double new_logp, double old_logp);

SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip_eps);

/// One rollout as the update sees it: tokens, snapshot-time log-probs, and the
/// (already modulated) advantage, which is a stop-gradient constant.
struct RolloutForUpdate {
  int task = 0;
  std::string task_id;
  std::vector<int> tokens;
  std::vector<double> old_logprobs;
  double advantage = 0.0;
};

struct GroupForUpdate {
  std::vector<RolloutForUpdate> rollouts;
};

struct BatchObjectiveResult {
  ObjectiveReport report;
  std::vector<double> gradient;  // aligned with PolicyParams::logits
};

/// Token-averaged clipped surrogate, averaged over rollouts within each group
/// and over groups, minus kl_beta times the exact KL to ref_params over the
/// visited contexts. Gradient is exact and analytic; advantages are constants.
BatchObjectiveResult batch_objective(const std::vector<GroupForUpdate>& groups,
                                     const policy::PolicyParams& params,
                                     const policy::PolicyParams* ref_params, double clip_eps,
                                     double kl_beta);

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  void ensure_size(std::size_t n) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
  }
};

nlohmann::json to_json(const AdamState& state);
AdamState adam_state_from_json(const nlohmann::json& j);

/// AdamW ascent step (bias-corrected moments, decoupled decay). Entries with a
/// zero gradient are skipped, so rows untouched by the batch stay unchanged
/// when decay is zero.
void optimizer_step(policy::PolicyParams& params, std::span<const double> gradient,
                    AdamState& state, const AdamConfig& config);

}  // namespace harpo::objective
