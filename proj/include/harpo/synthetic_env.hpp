#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "harpo/policy.hpp"
#include "harpo/rewards.hpp"
#include "json.hpp"

namespace harpo::env {

enum class TaskKind { kClassification, kQa, kStringSchema };
enum class RewardMode { kBinary, kDense };

TaskKind task_kind_from_string(const std::string& name);
std::string to_string(TaskKind kind);

struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::kClassification;
  int vocab_size = 4;  // answer-token count for this task
  std::vector<std::string> answer_labels;
  double difficulty = 0.0;  // probability a sample's gold deviates from the modal answer
  // qa only: probability an instance gets a uniform gold vector, making every
  // decodable answer score the same. Such instances saturate once the policy
  // reliably decodes, leaving rare extreme advantages to the rest of the pool.
  double flat_fraction = 0.0;
  RewardMode reward_mode = RewardMode::kBinary;
  bool render_text = false;  // enables format and length rewards
};

struct TaskInstance {
  std::string task_id;
  std::string sample_id;  // stable across epochs: "<task_id>#<index>"
  int task_index = 0;
  int gold_answer = 0;
  std::vector<double> gold_vector;  // qa only, one weight per answer token
};

struct Suite {
  std::string preset;
  std::uint64_t seed = 0;
  int answer_tokens = 4;
  std::vector<TaskSpec> tasks;
  std::vector<std::vector<TaskInstance>> pools;
};

/// Deterministic suite construction from (preset, seed) alone.
/// Presets: balanced (identical dense tasks), heterogeneous (mixed reward
/// shapes), starved (one task with a systematically weak learning signal).
Suite build_suite(const std::string& preset, std::uint64_t seed, int instances_per_task,
                  int answer_tokens);

/// Suite from an explicit task list (all TaskSpec fields), same pool generation.
Suite build_suite_from_specs(std::vector<TaskSpec> tasks, std::uint64_t seed,
                             int instances_per_task, int answer_tokens);

nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);
void export_pools_jsonl(const Suite& suite, std::ostream& out);

/// Embedding hook for qa scoring. The built-in toy provider maps token
/// sequences to L2-normalized bag-of-token count vectors over the task's
/// answer vocabulary; real sentence embedders are out of scope.
class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual std::vector<double> embed(std::span<const int> answer_tokens, int dims) const = 0;
};

class BagOfTokenProvider : public SimilarityProvider {
 public:
  std::vector<double> embed(std::span<const int> answer_tokens, int dims) const override;
};

/// Answer extraction: for classification/qa the last answer-vocabulary token in
/// the trace; for string_schema the last completed boxed group, which must be
/// exactly one answer token. Returns -1 when undecodable.
int extract_answer(const TaskSpec& spec, std::span<const int> tokens);

/// Task score of a rollout; undecodable answers score 0 rather than erroring.
double evaluate(const TaskSpec& spec, const TaskInstance& instance, std::span<const int> tokens,
                const SimilarityProvider& provider, int answer_tokens);

std::string render_text(std::span<const int> tokens, const TaskSpec& spec);

struct RewardParams {
  double w_fmt = 0.2;
  double lambda_len = 0.75;
  rewards::LengthPenaltyParams length;
};

/// Full per-rollout reward. Tasks without text rendering are trivially
/// format-adherent and carry no length penalty.
rewards::RewardComponents rollout_reward(const TaskSpec& spec, const TaskInstance& instance,
                                         const policy::RolloutTrace& trace,
                                         const SimilarityProvider& provider, int answer_tokens,
                                         const RewardParams& params);

/// Exact expectation of task_score under the policy, pooled over the task's
/// instance pool, via dynamic programming over (position, last token,
/// extraction automaton state). Errors when the state space exceeds the bound.
double expected_reward_oracle(const TaskSpec& spec, const std::vector<TaskInstance>& pool,
                              const policy::PolicyParams& params, int task_index,
                              int state_bound = 4096);

}  // namespace harpo::env
