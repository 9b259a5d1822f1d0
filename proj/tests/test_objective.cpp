#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "harpo/objective.hpp"
#include "harpo/rng.hpp"

using namespace harpo;
using namespace harpo::objective;

namespace {

policy::PolicyParams random_policy(int n_tasks, int n_buckets, int answer_tokens, int max_len,
                                   std::uint64_t seed) {
  policy::PolicyParams p = policy::make_policy(n_tasks, n_buckets, answer_tokens, max_len);
  auto rng = make_rng({seed});
  std::normal_distribution<double> n(0.0, 0.8);
  for (double& x : p.logits) x = n(rng);
  return p;
}

std::vector<GroupForUpdate> random_batch(const policy::PolicyParams& sampler, int n_tasks,
                                         int groups_per_task, int group_size,
                                         std::uint64_t seed) {
  std::vector<GroupForUpdate> batch;
  auto adv_rng = make_rng({seed, 1});
  std::normal_distribution<double> adv(0.0, 1.0);
  for (int m = 0; m < n_tasks; ++m) {
    for (int q = 0; q < groups_per_task; ++q) {
      GroupForUpdate g;
      for (int i = 0; i < group_size; ++i) {
        auto rng = make_rng({seed, static_cast<std::uint64_t>(m),
                             static_cast<std::uint64_t>(q), static_cast<std::uint64_t>(i)});
        const policy::RolloutTrace t = policy::sample_rollout(sampler, m, rng);
        RolloutForUpdate r;
        r.task = m;
        r.task_id = "task" + std::to_string(m);
        r.tokens = t.tokens;
        r.old_logprobs = t.logprobs;
        r.advantage = adv(adv_rng);
        g.rollouts.push_back(std::move(r));
      }
      batch.push_back(std::move(g));
    }
  }
  return batch;
}

}  // namespace

TEST_CASE("importance ratio") {
  CHECK(importance_ratio(-1.5, -1.5) == 1.0);
  CHECK(importance_ratio(std::log(0.6), std::log(0.5)) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK_THROWS(importance_ratio(1e10, -1e10));
}

TEST_CASE("clipped surrogate") {
  SUBCASE("clip binds above") {
    const SurrogateTerm t = clipped_surrogate(1.3, 1.0, 0.2);
    CHECK(t.clipped_value == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(t.ratio == 1.3);
    CHECK(t.advantage_used == 1.0);
  }
  SUBCASE("pessimistic min with negative advantage") {
    // min(0.7*(-1), clip(0.7)*(-1)) = min(-0.7, -0.8) = -0.8.
    const SurrogateTerm t = clipped_surrogate(0.7, -1.0, 0.2);
    CHECK(t.clipped_value == doctest::Approx(-0.8).epsilon(1e-12));
  }
  SUBCASE("unit ratio passes the advantage through") {
    CHECK(clipped_surrogate(1.0, 0.37, 0.2).clipped_value ==
          doctest::Approx(0.37).epsilon(1e-12));
    CHECK(clipped_surrogate(1.0, -2.2, 0.05).clipped_value ==
          doctest::Approx(-2.2).epsilon(1e-12));
  }
  SUBCASE("inactive clip equals unclipped product") {
    for (double ratio : {0.85, 0.95, 1.0, 1.1, 1.19}) {
      for (double a : {-1.5, 0.0, 2.0}) {
        CHECK(clipped_surrogate(ratio, a, 0.2).clipped_value ==
              doctest::Approx(std::min(ratio * a, ratio * a)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("bad clip epsilon") { CHECK_THROWS(clipped_surrogate(1.0, 1.0, 0.0)); }
}

TEST_CASE("batch objective at the snapshot point") {
  const policy::PolicyParams p = random_policy(2, 3, 2, 5, 11);
  const std::vector<GroupForUpdate> batch = random_batch(p, 2, 2, 3, 501);
  const BatchObjectiveResult res = batch_objective(batch, p, nullptr, 0.2, 0.0);
  // All ratios are 1, so the surrogate is the weighted advantage mean.
  double want = 0.0;
  for (const auto& g : batch) {
    double group_acc = 0.0;
    for (const auto& r : g.rollouts) group_acc += r.advantage;
    want += group_acc / g.rollouts.size();
  }
  want /= batch.size();
  CHECK(res.report.surrogate_mean == doctest::Approx(want).epsilon(1e-9));
  CHECK(res.report.kl_term == 0.0);
  CHECK(res.report.total == res.report.surrogate_mean);

  SUBCASE("zero advantages zero everything") {
    std::vector<GroupForUpdate> zeroed = batch;
    for (auto& g : zeroed) {
      for (auto& r : g.rollouts) r.advantage = 0.0;
    }
    const BatchObjectiveResult z = batch_objective(zeroed, p, nullptr, 0.2, 0.0);
    CHECK(z.report.total == 0.0);
    for (double g : z.gradient) CHECK(g == 0.0);
  }

  SUBCASE("empty batch errors") {
    CHECK_THROWS(batch_objective({}, p, nullptr, 0.2, 0.0));
  }

  SUBCASE("group and rollout permutation invariance") {
    std::vector<GroupForUpdate> permuted = batch;
    std::swap(permuted.front(), permuted.back());
    std::swap(permuted.front().rollouts.front(), permuted.front().rollouts.back());
    const BatchObjectiveResult r2 = batch_objective(permuted, p, nullptr, 0.2, 0.0);
    CHECK(r2.report.surrogate_mean == doctest::Approx(res.report.surrogate_mean).epsilon(1e-12));
  }
}

TEST_CASE("batch objective gradient matches finite differences") {
  for (int trial = 0; trial < 100; ++trial) {
    // Small instances: 2 tasks, 2 samples each, G = 3, sequences <= 4 tokens.
    const policy::PolicyParams sampler = random_policy(2, 2, 2, 4, 900 + trial);
    policy::PolicyParams p = random_policy(2, 2, 2, 4, 1900 + trial);
    const std::vector<GroupForUpdate> batch =
        random_batch(sampler, 2, 2, 3, 7000 + trial);
    const double clip_eps = 0.2;
    const BatchObjectiveResult res = batch_objective(batch, p, nullptr, clip_eps, 0.0);
    auto value = [&](const policy::PolicyParams& q) {
      return batch_objective(batch, q, nullptr, clip_eps, 0.0).report.total;
    };
    auto rng = make_rng({4242, static_cast<std::uint64_t>(trial)});
    std::uniform_int_distribution<std::size_t> pick(0, p.logits.size() - 1);
    const double h = 1e-5;
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = pick(rng);
      policy::PolicyParams hi = p;
      policy::PolicyParams lo = p;
      hi.logits[i] += h;
      lo.logits[i] -= h;
      const double fd = (value(hi) - value(lo)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(res.gradient[i]), 1e-6});
      CHECK(std::abs(fd - res.gradient[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("KL term behavior") {
  const policy::PolicyParams sampler = random_policy(1, 2, 2, 4, 61);
  policy::PolicyParams p = random_policy(1, 2, 2, 4, 62);
  const policy::PolicyParams ref = policy::snapshot(p);
  const std::vector<GroupForUpdate> batch = random_batch(sampler, 1, 2, 2, 63);
  const BatchObjectiveResult without = batch_objective(batch, p, nullptr, 0.2, 0.0);
  // With p == ref the KL vanishes and the objective is unchanged.
  const BatchObjectiveResult with_ref = batch_objective(batch, p, &ref, 0.2, 0.4);
  CHECK(with_ref.report.kl_term == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(with_ref.report.total == doctest::Approx(without.report.total).epsilon(1e-12));
  // A genuinely different reference produces a positive penalty.
  const policy::PolicyParams other = random_policy(1, 2, 2, 4, 64);
  const BatchObjectiveResult penalized = batch_objective(batch, p, &other, 0.2, 0.4);
  CHECK(penalized.report.kl_term > 0.0);
  CHECK(penalized.report.total ==
        doctest::Approx(penalized.report.surrogate_mean - 0.4 * penalized.report.kl_term)
            .epsilon(1e-12));
}

TEST_CASE("adamw optimizer") {
  SUBCASE("zero gradient keeps params") {
    policy::PolicyParams p = random_policy(1, 2, 2, 4, 70);
    const std::vector<double> before = p.logits;
    AdamState state;
    state.ensure_size(p.size());
    const std::vector<double> zero(p.size(), 0.0);
    optimizer_step(p, zero, state, AdamConfig{});
    CHECK(p.logits == before);
  }

  SUBCASE("first step closed form (ascent)") {
    policy::PolicyParams p = policy::make_policy(1, 1, 1, 2);
    std::vector<double> g(p.size(), 0.0);
    g[3] = 0.5;
    g[7] = -2.0;
    AdamState state;
    state.ensure_size(p.size());
    AdamConfig config;
    optimizer_step(p, g, state, config);
    // Bias correction makes m_hat = g, v_hat = g^2 at t = 1.
    for (std::size_t i : {std::size_t{3}, std::size_t{7}}) {
      const double want = config.lr * g[i] / (std::abs(g[i]) + config.eps);
      CHECK(p.logits[i] == doctest::Approx(want).epsilon(1e-9));
    }
    CHECK(p.logits[0] == 0.0);
    CHECK(state.t == 1);
  }

  SUBCASE("two steps follow the moment recurrence") {
    policy::PolicyParams p = policy::make_policy(1, 1, 1, 2);
    std::vector<double> g(p.size(), 0.0);
    g[2] = 1.25;
    AdamState state;
    state.ensure_size(p.size());
    AdamConfig config;
    optimizer_step(p, g, state, config);
    optimizer_step(p, g, state, config);
    // Scripted recurrence, same constants.
    double m = 0.0;
    double v = 0.0;
    double x = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = config.beta1 * m + (1 - config.beta1) * g[2];
      v = config.beta2 * v + (1 - config.beta2) * g[2] * g[2];
      const double m_hat = m / (1 - std::pow(config.beta1, t));
      const double v_hat = v / (1 - std::pow(config.beta2, t));
      x += config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    CHECK(p.logits[2] == doctest::Approx(x).epsilon(1e-12));
  }

  SUBCASE("non-finite gradient errors") {
    policy::PolicyParams p = policy::make_policy(1, 1, 1, 2);
    std::vector<double> g(p.size(), 0.0);
    g[1] = std::numeric_limits<double>::quiet_NaN();
    AdamState state;
    state.ensure_size(p.size());
    CHECK_THROWS(optimizer_step(p, g, state, AdamConfig{}));
  }

  SUBCASE("state serialization is bit-exact") {
    AdamState state;
    state.ensure_size(4);
    state.m = {0.1, -0.27, 1e-17, 3.0};
    state.v = {0.3377, 0.0, 5e300, 1e-300};
    state.t = 42;
    const AdamState back =
        adam_state_from_json(nlohmann::json::parse(to_json(state).dump()));
    CHECK(back.m == state.m);
    CHECK(back.v == state.v);
    CHECK(back.t == state.t);
  }
}
