#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <set>
#include <vector>

#include "json.hpp"

namespace harpo::policy {

// Structural tokens come first so format and length rewards are genuinely
// policy-controllable; answer tokens follow from kAnswerBase.
enum Token : int {
  kThinkOpen = 0,
  kThinkClose = 1,
  kBoxOpen = 2,
  kBoxClose = 3,
  kEos = 4,
  kAnswerBase = 5,
};

inline constexpr int kStructuralTokens = 5;

/// Bounded context summary: task id, position bucket, last emitted token
/// (vocab_size meaning start-of-sequence). Keeps the logit table finite.
struct Context {
  int task = 0;
  int bucket = 0;
  int prev = 0;  // in [0, vocab]; vocab == start of sequence

  auto operator<=>(const Context&) const = default;
};

struct PolicyParams {
  int n_tasks = 0;
  int n_buckets = 0;
  int vocab = 0;    // kStructuralTokens + answer tokens
  int max_len = 0;  // generation cap, EOS included
  std::vector<double> logits;  // [task][bucket][prev+1][vocab]

  int rows() const { return n_tasks * n_buckets * (vocab + 1); }
  std::size_t size() const { return static_cast<std::size_t>(rows()) * vocab; }
  int bucket_of(int pos) const { return pos < n_buckets ? pos : n_buckets - 1; }
  int row_index(const Context& c) const {
    return (c.task * n_buckets + c.bucket) * (vocab + 1) + c.prev;
  }
  std::span<const double> row(const Context& c) const {
    return {logits.data() + static_cast<std::size_t>(row_index(c)) * vocab,
            static_cast<std::size_t>(vocab)};
  }
};

/// Uniform policy (all logits zero).
PolicyParams make_policy(int n_tasks, int n_buckets, int answer_tokens, int max_len);

struct RolloutTrace {
  std::vector<int> tokens;
  std::vector<double> logprobs;
  int length() const { return static_cast<int>(tokens.size()); }
};

std::vector<double> log_softmax_row(const PolicyParams& params, const Context& ctx);
std::vector<double> softmax_row(const PolicyParams& params, const Context& ctx);

/// Autoregressive sampling; terminates at EOS or max_len. Log-probs are
/// recorded through the same code path as log_prob, so recomputation on the
/// sampling parameters reproduces them bit-for-bit.
RolloutTrace sample_rollout(const PolicyParams& params, int task, std::mt19937_64& rng);

/// Exact per-token log softmax values for a given token sequence.
std::vector<double> log_prob(const PolicyParams& params, int task, std::span<const int> tokens);

/// Analytic gradient of sum_k log pi(a_k | c_k) with respect to the logits,
/// as a dense table aligned with PolicyParams::logits.
std::vector<double> grad_log_prob(const PolicyParams& params, int task,
                                  std::span<const int> tokens);

/// Adds sum_k coeff_k * d log pi(a_k | c_k) / d logits into grad_out.
void add_scaled_grad_log_prob(const PolicyParams& params, int task, std::span<const int> tokens,
                              std::span<const double> coeffs, std::vector<double>& grad_out);

/// Contexts visited by a token sequence, in emission order.
std::vector<Context> visited_contexts(const PolicyParams& params, int task,
                                      std::span<const int> tokens);

PolicyParams snapshot(const PolicyParams& params);

/// Mean over contexts of KL(p(.|c) || q(.|c)). Structures must match.
double exact_kl(const PolicyParams& p, const PolicyParams& q,
                const std::set<Context>& contexts);

/// Gradient of exact_kl with respect to p's logits (dense table).
std::vector<double> grad_exact_kl(const PolicyParams& p, const PolicyParams& q,
                                  const std::set<Context>& contexts);

nlohmann::json to_json(const PolicyParams& params);
PolicyParams policy_from_json(const nlohmann::json& j);

}  // namespace harpo::policy
