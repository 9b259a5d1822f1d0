#include "harpo/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace harpo::adv {

Variant variant_from_string(const std::string& name) {
  if (name == "harpo") return Variant::kHarpo;
  if (name == "grpo") return Variant::kGrpo;
  if (name == "no_structured") return Variant::kNoStructured;
  if (name == "no_sample_level") return Variant::kNoSampleLevel;
  if (name == "no_inertial") return Variant::kNoInertial;
  throw std::invalid_argument("unknown estimator variant: " + name);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kHarpo: return "harpo";
    case Variant::kGrpo: return "grpo";
    case Variant::kNoStructured: return "no_structured";
    case Variant::kNoSampleLevel: return "no_sample_level";
    case Variant::kNoInertial: return "no_inertial";
  }
  throw std::logic_error("bad variant");
}

nlohmann::json to_json(const ModulationState& state) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& [key, lvl] : state.per_sample) {
    samples.push_back({{"task", key.first}, {"sample", key.second},
                       {"p_bar", lvl.p_bar}, {"s", lvl.s}});
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& [task, lvl] : state.per_task) {
    tasks.push_back({{"task", task}, {"p_bar", lvl.p_bar}, {"s", lvl.s}});
  }
  return {{"version", 1}, {"step", state.step},
          {"per_sample", samples}, {"per_task", tasks}};
}

ModulationState modulation_state_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) {
    throw std::runtime_error("unsupported modulation state version");
  }
  ModulationState state;
  state.step = j.at("step").get<std::uint64_t>();
  for (const auto& e : j.at("per_sample")) {
    state.per_sample[{e.at("task").get<std::string>(), e.at("sample").get<std::string>()}] =
        LevelState{e.at("p_bar").get<double>(), e.at("s").get<double>()};
  }
  for (const auto& e : j.at("per_task")) {
    state.per_task[e.at("task").get<std::string>()] =
        LevelState{e.at("p_bar").get<double>(), e.at("s").get<double>()};
  }
  return state;
}

GroupStats group_stats(std::span<const double> rewards) {
  GroupStats stats;
  stats.group_size = static_cast<int>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  stats.mean = sum / static_cast<double>(rewards.size());
  double sq = 0.0;
  for (double r : rewards) {
    const double d = r - stats.mean;
    sq += d * d;
  }
  stats.stddev = std::sqrt(sq / static_cast<double>(rewards.size()));
  return stats;
}

std::pair<GroupStats, std::vector<double>> group_normalize(std::span<const double> rewards,
                                                           double epsilon) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("group_normalize: group size must be >= 2");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("group_normalize: epsilon must be positive");
  }
  GroupStats stats = group_stats(rewards);
  std::vector<double> normalized(rewards.size());
  const double denom = stats.stddev + epsilon;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    normalized[i] = (rewards[i] - stats.mean) / denom;
  }
  return {stats, std::move(normalized)};
}

ContributionSignal sample_contribution(std::span<const double> normalized) {
  if (normalized.empty()) {
    throw std::invalid_argument("sample_contribution: empty group");
  }
  double sum = 0.0;
  for (double a : normalized) sum += std::abs(a);
  return ContributionSignal{sum / static_cast<double>(normalized.size())};
}

ContributionSignal task_contribution(const std::vector<std::vector<double>>& groups) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups) {
    for (double a : g) sum += std::abs(a);
    count += g.size();
  }
  if (count == 0) {
    throw std::invalid_argument("task_contribution: no rollouts");
  }
  return ContributionSignal{sum / static_cast<double>(count)};
}

double geometric_reference(std::span<const double> values) {
  if (values.empty()) {
    throw std::invalid_argument("geometric_reference: empty input");
  }
  double log_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0)) {
      throw std::invalid_argument("geometric_reference: non-positive value");
    }
    log_sum += std::log(v);
  }
  return std::exp(log_sum / static_cast<double>(values.size()));
}

std::vector<double> raw_factors(std::span<const double> signals, double reference) {
  std::vector<double> out(signals.size());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    out[i] = reference / signals[i];
  }
  return out;
}

double smooth_signal(double previous, double observed, double beta_rho) {
  return beta_rho * previous + (1.0 - beta_rho) * observed;
}

double smooth_factor(double previous, double raw, double beta_s) {
  return std::exp(beta_s * std::log(previous) + (1.0 - beta_s) * std::log(raw));
}

namespace {

double floored(double p) { return std::max(p, kContributionFloor); }

// Raw log-factor against the scope's own geometric reference, written as a
// mean of pairwise log differences so all-equal signals give exactly zero
// (and hence a factor of exactly 1).
std::vector<double> centered_log_factors(const std::vector<double>& log_signals) {
  const std::size_t n = log_signals.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += log_signals[j] - log_signals[i];
    }
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

double clamp_factor(double s, const ModulationConfig& config) {
  if (config.s_max > 0.0) {
    return std::clamp(s, config.s_min, config.s_max);
  }
  return s;
}

}  // namespace

BatchModulation modulation_step(const std::map<GroupKey, NormalizedGroup>& batch,
                                ModulationState& state, const ModulationConfig& config) {
  if (batch.empty()) {
    throw std::invalid_argument("modulation_step: empty batch");
  }
  const bool grpo = config.variant == Variant::kGrpo;
  const bool sample_level = config.variant != Variant::kNoSampleLevel && !grpo;
  const bool structured = config.variant != Variant::kNoStructured;
  double beta_rho = config.beta_rho;
  double beta_s = config.beta_s;
  if (config.variant == Variant::kNoInertial) {
    beta_rho = 0.0;
    beta_s = 0.0;
  }

  // Contribution signals per sample and per task, plus EMA updates.
  std::map<GroupKey, double> p_sample, p_bar_sample;
  std::map<std::string, std::vector<std::vector<double>>> task_groups;
  for (const auto& [key, group] : batch) {
    if (group.normalized.empty()) {
      throw std::invalid_argument("modulation_step: empty group for task " + key.first +
                                  " sample " + key.second);
    }
    for (double a : group.normalized) {
      if (!std::isfinite(a)) {
        throw std::runtime_error("modulation_step: non-finite advantage in task " + key.first +
                                 " sample " + key.second);
      }
    }
    const double p = floored(sample_contribution(group.normalized).value);
    p_sample[key] = p;
    auto it = state.per_sample.find(key);
    if (it == state.per_sample.end()) {
      it = state.per_sample.emplace(key, LevelState{p, 1.0}).first;
    } else {
      it->second.p_bar = floored(smooth_signal(it->second.p_bar, p, beta_rho));
    }
    p_bar_sample[key] = it->second.p_bar;
    task_groups[key.first].push_back(group.normalized);
  }

  std::map<std::string, double> p_task, p_bar_task;
  for (const auto& [task, groups] : task_groups) {
    const double p = floored(task_contribution(groups).value);
    p_task[task] = p;
    auto it = state.per_task.find(task);
    if (it == state.per_task.end()) {
      it = state.per_task.emplace(task, LevelState{p, 1.0}).first;
    } else {
      it->second.p_bar = floored(smooth_signal(it->second.p_bar, p, beta_rho));
    }
    p_bar_task[task] = it->second.p_bar;
  }

  const bool use_smoothed = config.reference_source == ReferenceSource::kSmoothed;
  auto sample_signal = [&](const GroupKey& key) {
    return use_smoothed ? p_bar_sample.at(key) : p_sample.at(key);
  };
  auto task_signal = [&](const std::string& task) {
    return use_smoothed ? p_bar_task.at(task) : p_task.at(task);
  };

  // Raw factors in log space, per scope, then multiplicative smoothing.
  std::map<GroupKey, double> sample_factor;
  std::map<std::string, double> per_task_sample_log_sum;
  if (sample_level) {
    std::map<std::string, std::vector<GroupKey>> keys_by_task;
    for (const auto& [key, group] : batch) {
      keys_by_task[key.first].push_back(key);
    }
    for (const auto& [task, keys] : keys_by_task) {
      std::vector<double> log_signals;
      log_signals.reserve(keys.size());
      for (const auto& key : keys) {
        log_signals.push_back(std::log(sample_signal(key)));
      }
      std::vector<double> log_raw(keys.size());
      if (structured) {
        log_raw = centered_log_factors(log_signals);
      } else {
        for (std::size_t i = 0; i < keys.size(); ++i) log_raw[i] = -log_signals[i];
      }
      double log_sum = 0.0;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        auto& lvl = state.per_sample.at(keys[i]);
        lvl.s = clamp_factor(smooth_factor(lvl.s, std::exp(log_raw[i]), beta_s), config);
        sample_factor[keys[i]] = lvl.s;
        log_sum += std::log(lvl.s);
      }
      per_task_sample_log_sum[task] = log_sum;
    }
  } else {
    for (const auto& [key, group] : batch) sample_factor[key] = 1.0;
    for (const auto& [task, groups] : task_groups) per_task_sample_log_sum[task] = 0.0;
  }

  BatchModulation out;
  if (!grpo) {
    std::vector<std::string> tasks;
    std::vector<double> log_signals;
    for (const auto& [task, groups] : task_groups) {
      tasks.push_back(task);
      log_signals.push_back(std::log(task_signal(task)));
    }
    std::vector<double> log_raw(tasks.size());
    if (structured) {
      log_raw = centered_log_factors(log_signals);
    } else {
      for (std::size_t i = 0; i < tasks.size(); ++i) log_raw[i] = -log_signals[i];
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      auto& lvl = state.per_task.at(tasks[i]);
      lvl.s = clamp_factor(smooth_factor(lvl.s, std::exp(log_raw[i]), beta_s), config);
      out.task_factor[tasks[i]] = lvl.s;
      out.task_factor_log_sum += std::log(lvl.s);
    }
    out.task_factor_geomean =
        std::exp(out.task_factor_log_sum / static_cast<double>(tasks.size()));
  } else {
    for (const auto& [task, groups] : task_groups) out.task_factor[task] = 1.0;
    out.task_factor_geomean = 1.0;
  }

  out.task_raw_signal = p_task;
  out.task_smoothed_signal = p_bar_task;
  out.sample_log_factor_sum = per_task_sample_log_sum;

  for (const auto& [key, group] : batch) {
    ModulatedGroup mg;
    mg.key = key;
    mg.sample_factor = sample_factor.at(key);
    mg.task_factor = out.task_factor.at(key.first);
    mg.records.reserve(group.normalized.size());
    for (std::size_t i = 0; i < group.normalized.size(); ++i) {
      AdvantageRecord rec;
      rec.raw_reward = i < group.raw_rewards.size() ? group.raw_rewards[i] : 0.0;
      rec.normalized = group.normalized[i];
      rec.sample_factor_applied = mg.sample_factor;
      rec.task_factor_applied = mg.task_factor;
      rec.modulated = rec.sample_factor_applied * rec.task_factor_applied * rec.normalized;
      if (!std::isfinite(rec.modulated)) {
        throw std::runtime_error("modulation_step: non-finite modulated advantage in task " +
                                 key.first + " sample " + key.second);
      }
      mg.records.push_back(rec);
    }
    out.groups.push_back(std::move(mg));
  }
  state.step += 1;
  return out;
}

BatchModulation estimator_variant(const std::map<GroupKey, NormalizedGroup>& batch,
                                  ModulationState& state, const ModulationConfig& config) {
  return modulation_step(batch, state, config);
}

}  // namespace harpo::adv
