#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace harpo::adv {

// Contribution signals are floored here before any logarithm or division, so
// all-zero-advantage groups stay inside the pipeline with finite factors.
inline constexpr double kContributionFloor = 1e-8;

struct GroupStats {
  double mean = 0.0;
  double stddev = 0.0;  // population std, divisor = group size
  int group_size = 0;
};

struct AdvantageRecord {
  double raw_reward = 0.0;
  double normalized = 0.0;  // group-normalized advantage
  double modulated = 0.0;   // sample_factor * task_factor * normalized
  double sample_factor_applied = 1.0;
  double task_factor_applied = 1.0;
};

struct ContributionSignal {
  double value = 0.0;  // >= 0, finite
};

/// Smoothed contribution signal and smoothed modulation factor for one scope
/// (one sample or one task). s is 1 immediately after initialization.
struct LevelState {
  double p_bar = 0.0;
  double s = 1.0;
};

enum class Variant { kHarpo, kGrpo, kNoStructured, kNoSampleLevel, kNoInertial };
enum class ReferenceSource { kSmoothed, kRaw };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

struct ModulationConfig {
  Variant variant = Variant::kHarpo;
  double beta_rho = 0.95;
  double beta_s = 0.95;
  ReferenceSource reference_source = ReferenceSource::kSmoothed;
  // Optional factor clamp; disabled (the paper applies none) when s_max <= 0.
  double s_min = 0.0;
  double s_max = 0.0;
};

/// The algorithm's only cross-step mutable state: smoothed signals and factors
/// keyed by stable ids so revisited samples resume their EMA.
struct ModulationState {
  std::map<std::pair<std::string, std::string>, LevelState> per_sample;
  std::map<std::string, LevelState> per_task;
  std::uint64_t step = 0;
};

nlohmann::json to_json(const ModulationState& state);
ModulationState modulation_state_from_json(const nlohmann::json& j);

GroupStats group_stats(std::span<const double> rewards);

/// (r_i - mean) / (std + epsilon). Groups of size < 2 are an error.
std::pair<GroupStats, std::vector<double>> group_normalize(std::span<const double> rewards,
                                                           double epsilon);

/// Mean absolute group-normalized advantage over one rollout group.
ContributionSignal sample_contribution(std::span<const double> normalized);

/// Rollout-count-weighted mean absolute advantage over all groups of a task.
ContributionSignal task_contribution(const std::vector<std::vector<double>>& groups);

/// exp(mean(log values)), computed in log space. Values must be positive.
double geometric_reference(std::span<const double> values);

/// s_i = reference / signals_i.
std::vector<double> raw_factors(std::span<const double> signals, double reference);

/// EMA: beta_rho * previous + (1 - beta_rho) * observed.
double smooth_signal(double previous, double observed, double beta_rho);

/// Geometric interpolation previous^beta_s * raw^(1-beta_s), in log space.
double smooth_factor(double previous, double raw, double beta_s);

using GroupKey = std::pair<std::string, std::string>;  // (task_id, sample_id)

struct NormalizedGroup {
  std::vector<double> raw_rewards;
  std::vector<double> normalized;
};

struct ModulatedGroup {
  GroupKey key;
  double sample_factor = 1.0;
  double task_factor = 1.0;
  std::vector<AdvantageRecord> records;
};

struct BatchModulation {
  std::vector<ModulatedGroup> groups;  // batch iteration order (sorted by key)
  std::map<std::string, double> task_factor;
  std::map<std::string, double> task_raw_signal;       // p_m of this step
  std::map<std::string, double> task_smoothed_signal;  // p_bar_m after the EMA
  std::map<std::string, double> sample_log_factor_sum;  // per task, over batch samples
  double task_factor_log_sum = 0.0;
  double task_factor_geomean = 1.0;
};

/// One full modulation pass over a batch of already-normalized groups:
/// contribution signals -> EMA smoothing -> geometric references -> reciprocal
/// ratio factors -> multiplicative smoothing -> modulated advantages. Mutates
/// `state` (single writer per training step).
BatchModulation modulation_step(const std::map<GroupKey, NormalizedGroup>& batch,
                                ModulationState& state, const ModulationConfig& config);

/// Variant dispatch: identical to modulation_step with the variant's
/// substitution (GRPO: all factors 1; no_structured: s = 1/p_bar;
/// no_sample_level: sample factors 1; no_inertial: beta_rho = beta_s = 0).
BatchModulation estimator_variant(const std::map<GroupKey, NormalizedGroup>& batch,
                                  ModulationState& state, const ModulationConfig& config);

}  // namespace harpo::adv
