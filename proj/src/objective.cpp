#include "harpo/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace harpo::objective {

double importance_ratio(double new_logp, double old_logp) {
  const double ratio = std::exp(new_logp - old_logp);
  if (!std::isfinite(ratio)) {
    throw std::runtime_error("importance_ratio: non-finite ratio from logp " +
                             std::to_string(new_logp) + " vs " + std::to_string(old_logp));
  }
  return ratio;
}

SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clipped_surrogate: clip_eps must lie in (0,1)");
  }
  SurrogateTerm term;
  term.ratio = ratio;
  term.advantage_used = advantage;
  const double clipped_ratio = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  term.clipped_value = std::min(ratio * advantage, clipped_ratio * advantage);
  return term;
}

BatchObjectiveResult batch_objective(const std::vector<GroupForUpdate>& groups,
                                     const policy::PolicyParams& params,
                                     const policy::PolicyParams* ref_params, double clip_eps,
                                     double kl_beta) {
  if (groups.empty()) {
    throw std::invalid_argument("batch_objective: empty batch");
  }
  BatchObjectiveResult result;
  result.gradient.assign(params.size(), 0.0);

  const double group_weight = 1.0 / static_cast<double>(groups.size());
  std::set<policy::Context> contexts;
  for (const GroupForUpdate& group : groups) {
    if (group.rollouts.empty()) {
      throw std::invalid_argument("batch_objective: empty group");
    }
    const double rollout_weight =
        group_weight / static_cast<double>(group.rollouts.size());
    for (const RolloutForUpdate& r : group.rollouts) {
      if (r.tokens.empty() || r.tokens.size() != r.old_logprobs.size()) {
        throw std::invalid_argument("batch_objective: malformed rollout");
      }
      const double token_weight = rollout_weight / static_cast<double>(r.tokens.size());
      std::vector<double> new_logp = policy::log_prob(params, r.task, r.tokens);
      std::vector<double> coeffs(r.tokens.size(), 0.0);
      double rollout_value = 0.0;
      for (std::size_t k = 0; k < r.tokens.size(); ++k) {
        const double phi = importance_ratio(new_logp[k], r.old_logprobs[k]);
        SurrogateTerm term = clipped_surrogate(phi, r.advantage, clip_eps);
        rollout_value += token_weight * term.clipped_value;
        // d/d logp of min(phi*A, clip(phi)*A): phi*A while the unclipped
        // branch is active, zero once the clip binds.
        const bool active = r.advantage >= 0.0 ? phi < 1.0 + clip_eps : phi > 1.0 - clip_eps;
        if (active) {
          coeffs[k] = token_weight * phi * r.advantage;
        }
      }
      result.report.surrogate_mean += rollout_value;
      result.report.per_task_breakdown[r.task_id] += rollout_value;
      policy::add_scaled_grad_log_prob(params, r.task, r.tokens, coeffs, result.gradient);
      if (kl_beta != 0.0 && ref_params != nullptr) {
        for (const auto& c : policy::visited_contexts(params, r.task, r.tokens)) {
          contexts.insert(c);
        }
      }
    }
  }

  if (kl_beta != 0.0 && ref_params != nullptr) {
    result.report.kl_term = policy::exact_kl(params, *ref_params, contexts);
    std::vector<double> kl_grad = policy::grad_exact_kl(params, *ref_params, contexts);
    for (std::size_t i = 0; i < result.gradient.size(); ++i) {
      result.gradient[i] -= kl_beta * kl_grad[i];
    }
  }
  result.report.total = result.report.surrogate_mean - kl_beta * result.report.kl_term;
  return result;
}

nlohmann::json to_json(const AdamState& state) {
  return {{"version", 1}, {"m", state.m}, {"v", state.v}, {"t", state.t}};
}

AdamState adam_state_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) {
    throw std::runtime_error("unsupported optimizer state version");
  }
  AdamState state;
  state.m = j.at("m").get<std::vector<double>>();
  state.v = j.at("v").get<std::vector<double>>();
  state.t = j.at("t").get<std::int64_t>();
  return state;
}

void optimizer_step(policy::PolicyParams& params, std::span<const double> gradient,
                    AdamState& state, const AdamConfig& config) {
  if (gradient.size() != params.size()) {
    throw std::invalid_argument("optimizer_step: gradient size mismatch");
  }
  state.ensure_size(params.size());
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    const double g = gradient[i];
    if (!std::isfinite(g)) {
      throw std::runtime_error("optimizer_step: non-finite gradient at index " +
                               std::to_string(i));
    }
    if (g == 0.0 && config.weight_decay == 0.0) {
      continue;
    }
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params.logits[i] += config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    params.logits[i] -= config.lr * config.weight_decay * params.logits[i];
  }
}

}  // namespace harpo::objective
