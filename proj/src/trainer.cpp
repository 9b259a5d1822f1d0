#include "harpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>

#include "harpo/rng.hpp"

namespace harpo::trainer {
namespace {

constexpr std::uint64_t kAllocTag = 0x616c6c6fULL;    // batch allocation stream
constexpr std::uint64_t kPickTag = 0x7069636bULL;     // instance selection stream
constexpr std::uint64_t kRolloutTag = 0x726f6c6cULL;  // per-rollout sampling streams
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;  // mini-batch ordering stream

struct GroupData {
  adv::GroupKey key;
  int task_index = 0;
  std::vector<policy::RolloutTrace> traces;
  std::vector<double> totals;
};

// Number of rollout groups drawn from each task this step. Uniform split with
// an rng-assigned remainder, or largest-remainder apportionment of weights.
std::vector<int> allocate_groups(const RunConfig& config, int n_tasks, std::int64_t step) {
  std::vector<int> counts(n_tasks, 0);
  if (!config.task_weights.empty()) {
    if (static_cast<int>(config.task_weights.size()) != n_tasks) {
      throw std::invalid_argument("trainer: task_weights size does not match task count");
    }
    const double total = std::accumulate(config.task_weights.begin(), config.task_weights.end(), 0.0);
    if (!(total > 0.0)) throw std::invalid_argument("trainer: task_weights must sum to > 0");
    std::vector<std::pair<double, int>> frac;
    int assigned = 0;
    for (int m = 0; m < n_tasks; ++m) {
      const double target = config.effective_batch * config.task_weights[m] / total;
      counts[m] = static_cast<int>(std::floor(target));
      assigned += counts[m];
      frac.emplace_back(target - counts[m], m);
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < config.effective_batch - assigned; ++k) {
      counts[frac[static_cast<std::size_t>(k) % frac.size()].second] += 1;
    }
    return counts;
  }
  const int base = config.effective_batch / n_tasks;
  int rem = config.effective_batch % n_tasks;
  std::fill(counts.begin(), counts.end(), base);
  if (rem > 0) {
    std::vector<int> order(n_tasks);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng({config.seed, kAllocTag, static_cast<std::uint64_t>(step)});
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < rem; ++k) counts[order[k]] += 1;
  }
  return counts;
}

// Distinct instance indices via a partial Fisher-Yates pass.
std::vector<int> pick_instances(int pool_size, int count, std::mt19937_64& rng) {
  std::vector<int> idx(pool_size);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, pool_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / values.size());
}

struct LoopState {
  RunConfig config;
  env::Suite suite;
  policy::PolicyParams params;
  policy::PolicyParams best_params;
  objective::AdamState opt;
  adv::ModulationState mod;
  double best_mean = -1.0;  // oracle rewards are nonnegative
  std::int64_t best_step = -1;
  int bad_streak = 0;
  std::int64_t step = 0;  // last completed step
};

std::map<std::string, double> run_oracle(const LoopState& s, const policy::PolicyParams& params) {
  std::map<std::string, double> out;
  for (std::size_t m = 0; m < s.suite.tasks.size(); ++m) {
    out[s.suite.tasks[m].task_id] =
        env::expected_reward_oracle(s.suite.tasks[m], s.suite.pools[m], params,
                                    static_cast<int>(m), s.config.oracle_state_bound);
  }
  return out;
}

Checkpoint make_checkpoint(const LoopState& s) {
  Checkpoint ck;
  ck.step = s.step;
  ck.params = s.params;
  ck.best_params = s.best_params;
  ck.opt = s.opt;
  ck.mod = s.mod;
  ck.best_mean = s.best_mean;
  ck.best_step = s.best_step;
  ck.bad_streak = s.bad_streak;
  ck.config_echo = to_json(s.config);
  return ck;
}

void check_finite_params(const policy::PolicyParams& params, std::int64_t step) {
  for (double v : params.logits) {
    if (!std::isfinite(v)) {
      throw TrainAbort("non-finite policy parameter after step " + std::to_string(step));
    }
  }
}

StepMetrics run_step(LoopState& s, const policy::PolicyParams* ref_params,
                     std::vector<AdvantageDumpRow>* dump) {
  const RunConfig& config = s.config;
  const int n_tasks = static_cast<int>(s.suite.tasks.size());
  const std::uint64_t step_u = static_cast<std::uint64_t>(s.step);
  const policy::PolicyParams old_params = policy::snapshot(s.params);
  const env::BagOfTokenProvider provider;
  env::RewardParams reward_params{config.w_fmt, config.lambda_len, config.length};

  // Rollout collection: stratified groups, G rollouts each, rewards.
  const std::vector<int> counts = allocate_groups(config, n_tasks, s.step);
  std::vector<GroupData> groups;
  groups.reserve(config.effective_batch);
  for (int m = 0; m < n_tasks; ++m) {
    const auto& pool = s.suite.pools[m];
    if (counts[m] > static_cast<int>(pool.size())) {
      throw std::invalid_argument("trainer: per-step allocation for task " +
                                  s.suite.tasks[m].task_id + " exceeds its instance pool");
    }
    auto pick_rng = make_rng({config.seed, kPickTag, step_u, static_cast<std::uint64_t>(m)});
    for (int idx : pick_instances(static_cast<int>(pool.size()), counts[m], pick_rng)) {
      const env::TaskInstance& inst = pool[idx];
      GroupData g;
      g.key = {inst.task_id, inst.sample_id};
      g.task_index = m;
      for (int i = 0; i < config.group_size; ++i) {
        auto rng = make_rng({config.seed, kRolloutTag, step_u, static_cast<std::uint64_t>(m),
                             static_cast<std::uint64_t>(idx), static_cast<std::uint64_t>(i)});
        policy::RolloutTrace trace = policy::sample_rollout(old_params, m, rng);
        const rewards::RewardComponents rc = env::rollout_reward(
            s.suite.tasks[m], inst, trace, provider, s.suite.answer_tokens, reward_params);
        g.totals.push_back(rc.total);
        g.traces.push_back(std::move(trace));
      }
      groups.push_back(std::move(g));
    }
  }

  // Normalization and variant modulation.
  std::map<adv::GroupKey, adv::NormalizedGroup> batch;
  for (const GroupData& g : groups) {
    adv::NormalizedGroup ng;
    ng.raw_rewards = g.totals;
    ng.normalized = adv::group_normalize(g.totals, config.epsilon).second;
    batch.emplace(g.key, std::move(ng));
  }
  adv::BatchModulation modulation = adv::estimator_variant(batch, s.mod, config.modulation_config());

  // Update list in modulation order, then a deterministic shuffle so
  // mini-batches mix tasks instead of consuming them alphabetically.
  std::map<adv::GroupKey, const GroupData*> by_key;
  for (const GroupData& g : groups) by_key[g.key] = &g;
  std::vector<objective::GroupForUpdate> update;
  update.reserve(modulation.groups.size());
  for (const adv::ModulatedGroup& mg : modulation.groups) {
    const GroupData& g = *by_key.at(mg.key);
    objective::GroupForUpdate gu;
    for (std::size_t i = 0; i < g.traces.size(); ++i) {
      objective::RolloutForUpdate r;
      r.task = g.task_index;
      r.task_id = mg.key.first;
      r.tokens = g.traces[i].tokens;
      r.old_logprobs = g.traces[i].logprobs;
      r.advantage = mg.records[i].modulated;
      gu.rollouts.push_back(std::move(r));
    }
    update.push_back(std::move(gu));
    if (dump != nullptr) {
      for (const adv::AdvantageRecord& rec : mg.records) {
        dump->push_back({s.step, mg.key.first, mg.key.second, rec.normalized, rec.modulated});
      }
    }
  }
  {
    auto rng = make_rng({config.seed, kShuffleTag, step_u});
    std::shuffle(update.begin(), update.end(), rng);
  }

  // Mini-batch AdamW passes against the step-start snapshot.
  const int n_mini = config.effective_batch / config.mini_batch;
  objective::ObjectiveReport report;
  int n_calls = 0;
  for (int pass = 0; pass < config.passes_per_batch; ++pass) {
    for (int b = 0; b < n_mini; ++b) {
      const std::vector<objective::GroupForUpdate> chunk(
          update.begin() + static_cast<std::ptrdiff_t>(b) * config.mini_batch,
          update.begin() + static_cast<std::ptrdiff_t>(b + 1) * config.mini_batch);
      objective::BatchObjectiveResult res = objective::batch_objective(
          chunk, s.params, config.kl_beta != 0.0 ? ref_params : nullptr, config.clip_eps,
          config.kl_beta);
      objective::optimizer_step(s.params, res.gradient, s.opt, config.optimizer);
      report.surrogate_mean += res.report.surrogate_mean;
      report.kl_term += res.report.kl_term;
      report.total += res.report.total;
      for (const auto& [task_id, v] : res.report.per_task_breakdown) {
        report.per_task_breakdown[task_id] += v;
      }
      n_calls += 1;
    }
  }
  report.surrogate_mean /= n_calls;
  report.kl_term /= n_calls;
  report.total /= n_calls;
  for (auto& [task_id, v] : report.per_task_breakdown) v /= n_calls;
  if (!std::isfinite(report.total)) {
    throw TrainAbort("non-finite objective at step " + std::to_string(s.step));
  }
  check_finite_params(s.params, s.step);

  // Step metrics from the modulation pass and the raw rewards.
  StepMetrics metrics;
  metrics.step = s.step;
  metrics.objective = report;
  metrics.s_task_geomean = modulation.task_factor_geomean;
  std::map<std::string, std::vector<double>> rewards_by_task;
  std::map<std::string, std::vector<double>> normalized_by_task;
  std::map<std::string, std::vector<double>> modulated_by_task;
  for (const GroupData& g : groups) {
    auto& r = rewards_by_task[g.key.first];
    r.insert(r.end(), g.totals.begin(), g.totals.end());
    double len_sum = 0.0;
    for (const auto& t : g.traces) {
      len_sum += t.length();
      metrics.max_rollout_len = std::max(metrics.max_rollout_len, t.length());
    }
    metrics.mean_rollout_len += len_sum;
  }
  metrics.mean_rollout_len /=
      static_cast<double>(config.effective_batch) * static_cast<double>(config.group_size);
  std::map<std::string, std::vector<double>> group_mags_by_task;
  for (const adv::ModulatedGroup& mg : modulation.groups) {
    auto& n = normalized_by_task[mg.key.first];
    auto& h = modulated_by_task[mg.key.first];
    double mag = 0.0;
    for (const adv::AdvantageRecord& rec : mg.records) {
      n.push_back(rec.normalized);
      h.push_back(rec.modulated);
      mag += std::abs(rec.modulated);
    }
    group_mags_by_task[mg.key.first].push_back(mag / mg.records.size());
  }
  double abs_adv_cross = 0.0;
  for (const auto& [task_id, normalized] : normalized_by_task) {
    TaskStepMetrics tm;
    const auto& rewards_list = rewards_by_task.at(task_id);
    tm.mean_reward =
        std::accumulate(rewards_list.begin(), rewards_list.end(), 0.0) / rewards_list.size();
    for (double a : normalized) tm.mean_abs_adv += std::abs(a);
    tm.mean_abs_adv /= normalized.size();
    const auto& modulated = modulated_by_task.at(task_id);
    for (double a : modulated) tm.mean_abs_mod_adv += std::abs(a);
    tm.mean_abs_mod_adv /= modulated.size();
    tm.mod_adv_std = population_std(modulated);
    tm.group_mag_std = population_std(group_mags_by_task.at(task_id));
    tm.s_task = modulation.task_factor.at(task_id);
    tm.sample_log_factor_sum = modulation.sample_log_factor_sum.at(task_id);
    tm.contribution_signal = modulation.task_smoothed_signal.at(task_id);
    abs_adv_cross += tm.mean_abs_adv;
    metrics.tasks.emplace(task_id, tm);
  }
  abs_adv_cross /= metrics.tasks.size();
  for (auto& [task_id, tm] : metrics.tasks) {
    tm.rel_task_adv = abs_adv_cross > 0.0 ? tm.mean_abs_adv / abs_adv_cross : 1.0;
  }
  return metrics;
}

TrainResult run_loop(LoopState s, const TrainHooks& hooks) {
  const RunConfig& config = s.config;
  const int n_tasks = static_cast<int>(s.suite.tasks.size());
  const std::int64_t max_steps = config.max_steps(n_tasks);
  policy::PolicyParams ref_params;
  if (config.kl_beta != 0.0) {
    ref_params = policy::make_policy(n_tasks, config.policy_buckets,
                                     s.suite.answer_tokens, config.policy_max_len);
  }

  TrainResult result;
  bool stopped = false;
  while (s.step < max_steps && !stopped) {
    s.step += 1;
    const bool dump_now =
        config.dump_advantages_every > 0 && s.step % config.dump_advantages_every == 0;
    std::vector<AdvantageDumpRow> dump;
    StepMetrics metrics = run_step(s, &ref_params, dump_now ? &dump : nullptr);
    if (hooks.on_step) hooks.on_step(metrics);
    if (dump_now && hooks.on_advantages) hooks.on_advantages(dump);
    result.history.push_back(std::move(metrics));

    if (s.step % config.validation_every == 0 || s.step == max_steps) {
      ValidationPoint vp;
      vp.step = s.step;
      vp.per_task = run_oracle(s, s.params);
      for (const auto& [task_id, v] : vp.per_task) vp.mean += v;
      vp.mean /= vp.per_task.size();
      vp.improved = vp.mean > s.best_mean;
      if (vp.improved) {
        s.best_mean = vp.mean;
        s.best_step = s.step;
        s.best_params = policy::snapshot(s.params);
        s.bad_streak = 0;
      } else {
        s.bad_streak += 1;
        if (s.bad_streak >= config.patience) stopped = true;
      }
      if (hooks.on_validation) hooks.on_validation(vp);
      if (hooks.on_checkpoint) hooks.on_checkpoint(make_checkpoint(s), vp.improved);
      result.validations.push_back(std::move(vp));
    }
  }

  result.params = std::move(s.params);
  result.best_params = s.best_step >= 0 ? std::move(s.best_params) : result.params;
  result.best_step = s.best_step;
  result.stopped_at_step = s.step;
  result.early_stopped = stopped;
  {
    LoopState probe;
    probe.config = s.config;
    probe.suite = std::move(s.suite);
    result.final_oracle = run_oracle(probe, result.best_params);
  }
  return result;
}

}  // namespace

nlohmann::json metrics_record(const StepMetrics& metrics, const std::string& run_id,
                              const std::string& variant, std::uint64_t seed) {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["variant"] = variant;
  j["seed"] = seed;
  j["step"] = metrics.step;
  j["objective/surrogate"] = metrics.objective.surrogate_mean;
  j["objective/kl"] = metrics.objective.kl_term;
  j["objective/total"] = metrics.objective.total;
  j["factor/task_geomean"] = metrics.s_task_geomean;
  j["rollout/mean_len"] = metrics.mean_rollout_len;
  j["rollout/max_len"] = metrics.max_rollout_len;
  for (const auto& [task_id, tm] : metrics.tasks) {
    const std::string p = "task/" + task_id + "/";
    j[p + "mean_reward"] = tm.mean_reward;
    j[p + "mean_abs_adv"] = tm.mean_abs_adv;
    j[p + "mean_abs_mod_adv"] = tm.mean_abs_mod_adv;
    j[p + "mod_adv_std"] = tm.mod_adv_std;
    j[p + "group_mag_std"] = tm.group_mag_std;
    j[p + "rel_adv"] = tm.rel_task_adv;
    j[p + "s_task"] = tm.s_task;
    j[p + "sample_log_factor_sum"] = tm.sample_log_factor_sum;
    j[p + "signal"] = tm.contribution_signal;
    j[p + "objective"] = metrics.objective.per_task_breakdown.count(task_id)
                             ? metrics.objective.per_task_breakdown.at(task_id)
                             : 0.0;
  }
  return j;
}

nlohmann::json to_json(const Checkpoint& ck) {
  return {{"version", 1},
          {"step", ck.step},
          {"policy", policy::to_json(ck.params)},
          {"best_policy", policy::to_json(ck.best_params)},
          {"optimizer", objective::to_json(ck.opt)},
          {"modulation", adv::to_json(ck.mod)},
          {"best_mean", ck.best_mean},
          {"best_step", ck.best_step},
          {"bad_streak", ck.bad_streak},
          {"config", ck.config_echo}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version");
  Checkpoint ck;
  ck.step = j.at("step").get<std::int64_t>();
  ck.params = policy::policy_from_json(j.at("policy"));
  ck.best_params = policy::policy_from_json(j.at("best_policy"));
  ck.opt = objective::adam_state_from_json(j.at("optimizer"));
  ck.mod = adv::modulation_state_from_json(j.at("modulation"));
  ck.best_mean = j.at("best_mean").get<double>();
  ck.best_step = j.at("best_step").get<std::int64_t>();
  ck.bad_streak = j.at("bad_streak").get<int>();
  ck.config_echo = j.at("config");
  return ck;
}

TrainResult train(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  LoopState s;
  s.config = config;
  s.suite = build_suite(config);
  const int n_tasks = static_cast<int>(s.suite.tasks.size());
  s.params = policy::make_policy(n_tasks, config.policy_buckets, s.suite.answer_tokens,
                                 config.policy_max_len);
  s.best_params = s.params;
  return run_loop(std::move(s), hooks);
}

TrainResult train_resume(const Checkpoint& ck, const TrainHooks& hooks) {
  LoopState s;
  s.config = run_config_from_json(ck.config_echo);
  s.suite = build_suite(s.config);
  s.params = ck.params;
  s.best_params = ck.best_params;
  s.opt = ck.opt;
  s.mod = ck.mod;
  s.best_mean = ck.best_mean;
  s.best_step = ck.best_step;
  s.bad_streak = ck.bad_streak;
  s.step = ck.step;
  return run_loop(std::move(s), hooks);
}

ComparisonReport compare(const std::vector<RunConfig>& configs, const TrainHooks& hooks) {
  if (configs.empty()) throw std::invalid_argument("compare: no configs");
  for (const RunConfig& c : configs) {
    if (c.suite.preset != configs.front().suite.preset || c.seed != configs.front().seed ||
        c.suite.instances_per_task != configs.front().suite.instances_per_task) {
      throw std::invalid_argument("compare: configs must share suite and seed");
    }
  }
  ComparisonReport report;
  for (const RunConfig& c : configs) {
    TrainResult res = train(c, hooks);
    VariantSummary vs;
    vs.variant = adv::to_string(c.estimator);
    vs.run_id = c.effective_run_id();
    vs.min_final_task_oracle = std::numeric_limits<double>::infinity();
    for (const auto& [task_id, v] : res.final_oracle) {
      vs.min_final_task_oracle = std::min(vs.min_final_task_oracle, v);
    }
    for (const StepMetrics& m : res.history) {
      vs.factor_geomean_trace.push_back(m.s_task_geomean);
      std::vector<double> per_task;
      for (const auto& [task_id, tm] : m.tasks) per_task.push_back(tm.mean_abs_mod_adv);
      vs.mod_adv_dispersion_trace.push_back(population_std(per_task));
    }
    report.summaries.push_back(std::move(vs));
    report.results.push_back(std::move(res));
  }
  return report;
}

}  // namespace harpo::trainer
