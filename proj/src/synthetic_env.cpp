#include "harpo/synthetic_env.hpp"

#include <cmath>
#include <stdexcept>

#include "harpo/rng.hpp"

namespace harpo::env {

namespace {

constexpr std::uint64_t kModalTag = 0x6d6f64616cULL;
constexpr std::uint64_t kGoldTag = 0x676f6c64ULL;

}  // namespace

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "qa") return TaskKind::kQa;
  if (name == "string_schema") return TaskKind::kStringSchema;
  throw std::invalid_argument("unknown task kind: " + name);
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kQa: return "qa";
    case TaskKind::kStringSchema: return "string_schema";
  }
  throw std::logic_error("bad task kind");
}

nlohmann::json to_json(const TaskSpec& spec) {
  return {{"task_id", spec.task_id},
          {"kind", to_string(spec.kind)},
          {"vocab_size", spec.vocab_size},
          {"answer_labels", spec.answer_labels},
          {"difficulty", spec.difficulty},
          {"flat_fraction", spec.flat_fraction},
          {"reward_mode", spec.reward_mode == RewardMode::kBinary ? "binary" : "dense"},
          {"render_text", spec.render_text}};
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec spec;
  spec.task_id = j.at("task_id").get<std::string>();
  spec.kind = task_kind_from_string(j.at("kind").get<std::string>());
  spec.vocab_size = j.at("vocab_size").get<int>();
  if (j.contains("answer_labels")) {
    spec.answer_labels = j.at("answer_labels").get<std::vector<std::string>>();
  }
  spec.difficulty = j.at("difficulty").get<double>();
  spec.flat_fraction = j.value("flat_fraction", 0.0);
  const std::string mode = j.value("reward_mode", std::string());
  if (!mode.empty()) {
    spec.reward_mode = mode == "binary" ? RewardMode::kBinary : RewardMode::kDense;
  }
  spec.render_text = j.value("render_text", false);
  return spec;
}

namespace {

void validate_spec(const TaskSpec& spec) {
  if (spec.vocab_size < 2) {
    throw std::invalid_argument("task " + spec.task_id + ": vocab_size must be >= 2");
  }
  if (spec.answer_labels.empty()) {
    throw std::invalid_argument("task " + spec.task_id + ": empty answer space");
  }
  if (spec.kind == TaskKind::kClassification && spec.reward_mode != RewardMode::kBinary) {
    throw std::invalid_argument("task " + spec.task_id + ": classification requires binary rewards");
  }
  if (spec.kind == TaskKind::kQa && spec.reward_mode != RewardMode::kDense) {
    throw std::invalid_argument("task " + spec.task_id + ": qa requires dense rewards");
  }
  if (spec.flat_fraction < 0.0 || spec.flat_fraction > 1.0) {
    throw std::invalid_argument("task " + spec.task_id + ": flat_fraction outside [0, 1]");
  }
  if (spec.flat_fraction > 0.0 && spec.kind != TaskKind::kQa) {
    throw std::invalid_argument("task " + spec.task_id + ": flat_fraction needs dense qa scoring");
  }
}

std::vector<std::string> default_labels(int n) {
  std::vector<std::string> labels;
  labels.reserve(n);
  for (int i = 0; i < n; ++i) labels.push_back("a" + std::to_string(i));
  return labels;
}

TaskInstance make_instance(const TaskSpec& spec, int task_index, int instance_index,
                           std::uint64_t seed, int answer_tokens) {
  TaskInstance inst;
  inst.task_id = spec.task_id;
  inst.sample_id = spec.task_id + "#" + std::to_string(instance_index);
  inst.task_index = task_index;
  const int n_answers = static_cast<int>(spec.answer_labels.size());
  const int modal =
      static_cast<int>(derive_seed({seed, static_cast<std::uint64_t>(task_index), kModalTag}) %
                       static_cast<std::uint64_t>(n_answers));
  auto rng = make_rng({seed, static_cast<std::uint64_t>(task_index),
                       static_cast<std::uint64_t>(instance_index), kGoldTag});
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  if (uniform(rng) < spec.difficulty && n_answers > 1) {
    int offset = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n_answers - 1));
    inst.gold_answer = (modal + offset) % n_answers;
  } else {
    inst.gold_answer = modal;
  }
  if (spec.kind == TaskKind::kQa) {
    if (uniform(rng) < spec.flat_fraction) {
      inst.gold_vector.assign(answer_tokens, 1.0 / answer_tokens);
      return inst;
    }
    inst.gold_vector.assign(answer_tokens, 0.0);
    double sum = 0.0;
    std::vector<double> noise(answer_tokens);
    for (int a = 0; a < answer_tokens; ++a) {
      noise[a] = uniform(rng);
      sum += noise[a];
    }
    for (int a = 0; a < answer_tokens; ++a) {
      inst.gold_vector[a] = spec.difficulty * noise[a] / sum;
    }
    inst.gold_vector[inst.gold_answer % answer_tokens] += 1.0 - spec.difficulty;
  }
  return inst;
}

}  // namespace

Suite build_suite_from_specs(std::vector<TaskSpec> tasks, std::uint64_t seed,
                             int instances_per_task, int answer_tokens) {
  if (tasks.empty()) {
    throw std::invalid_argument("build_suite: no tasks");
  }
  if (instances_per_task < 1) {
    throw std::invalid_argument("build_suite: instances_per_task must be positive");
  }
  Suite suite;
  suite.seed = seed;
  suite.answer_tokens = answer_tokens;
  for (auto& spec : tasks) {
    if (spec.answer_labels.empty()) {
      spec.answer_labels = default_labels(spec.vocab_size);
    }
    if (static_cast<int>(spec.answer_labels.size()) > answer_tokens) {
      throw std::invalid_argument("task " + spec.task_id +
                                  ": answer space exceeds answer token count");
    }
    validate_spec(spec);
  }
  suite.tasks = std::move(tasks);
  suite.pools.resize(suite.tasks.size());
  for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
    suite.pools[m].reserve(instances_per_task);
    for (int i = 0; i < instances_per_task; ++i) {
      suite.pools[m].push_back(
          make_instance(suite.tasks[m], static_cast<int>(m), i, seed, answer_tokens));
    }
  }
  return suite;
}

Suite build_suite(const std::string& preset, std::uint64_t seed, int instances_per_task,
                  int answer_tokens) {
  std::vector<TaskSpec> tasks;
  auto cls = [&](std::string id, double difficulty) {
    TaskSpec t;
    t.task_id = std::move(id);
    t.kind = TaskKind::kClassification;
    t.vocab_size = answer_tokens;
    t.difficulty = difficulty;
    t.reward_mode = RewardMode::kBinary;
    return t;
  };
  auto qa = [&](std::string id, double difficulty, double flat_fraction = 0.0) {
    TaskSpec t;
    t.task_id = std::move(id);
    t.kind = TaskKind::kQa;
    t.vocab_size = answer_tokens;
    t.difficulty = difficulty;
    t.flat_fraction = flat_fraction;
    t.reward_mode = RewardMode::kDense;
    return t;
  };
  auto box = [&](std::string id, double difficulty) {
    TaskSpec t;
    t.task_id = std::move(id);
    t.kind = TaskKind::kStringSchema;
    t.vocab_size = answer_tokens;
    t.difficulty = difficulty;
    t.reward_mode = RewardMode::kBinary;
    t.render_text = true;
    return t;
  };
  if (preset == "balanced") {
    for (int i = 0; i < 4; ++i) tasks.push_back(qa("qa" + std::to_string(i), 0.5));
  } else if (preset == "heterogeneous") {
    tasks.push_back(cls("cls_easy", 0.05));
    tasks.push_back(cls("cls_hard", 0.65));
    tasks.push_back(qa("qa_dense", 0.5));
    // Heavy-tailed: flat instances saturate, so most groups carry zero
    // advantage and the remainder carries the tail.
    tasks.push_back(qa("qa_heavy", 0.5, 0.6));
    tasks.push_back(box("box", 0.0));
  } else if (preset == "starved") {
    // Dense companions converge slowly, so their signals stay strong for the
    // whole run and the starved task remains the weakest contributor.
    tasks.push_back(qa("rich0", 0.25));
    tasks.push_back(qa("rich1", 0.25));
    tasks.push_back(qa("rich2", 0.25));
    // Wide-vocabulary classification: random guessing almost never hits gold,
    // so most groups carry identical zero rewards and the task's contribution
    // starts weak. Gold labels deviate from the modal answer often enough
    // that even the converged success rate stays below one half, keeping
    // group reward diversity rising for as long as the task keeps learning.
    tasks.push_back(cls("starved_cls", 0.55));
  } else {
    throw std::invalid_argument("unknown suite preset: " + preset);
  }
  Suite suite = build_suite_from_specs(std::move(tasks), seed, instances_per_task, answer_tokens);
  suite.preset = preset;
  return suite;
}

void export_pools_jsonl(const Suite& suite, std::ostream& out) {
  for (const auto& pool : suite.pools) {
    for (const auto& inst : pool) {
      nlohmann::json j = {{"task_id", inst.task_id},
                          {"sample_id", inst.sample_id},
                          {"gold_answer", inst.gold_answer}};
      if (!inst.gold_vector.empty()) {
        j["gold_vector"] = inst.gold_vector;
      }
      out << j.dump() << "\n";
    }
  }
}

std::vector<double> BagOfTokenProvider::embed(std::span<const int> answer_tokens,
                                              int dims) const {
  std::vector<double> counts(dims, 0.0);
  for (int t : answer_tokens) {
    if (t >= 0 && t < dims) {
      counts[t] += 1.0;
    }
  }
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& c : counts) c /= norm;
  }
  return counts;
}

namespace {

// Extraction automaton for boxed answers. Tracks the last completed boxed
// group (none / answer index / invalid) and the content of the currently open
// box. Shared between evaluate and the expectation oracle so the two can
// never disagree.
struct BoxAutomaton {
  int n_answers;
  int n_completed() const { return n_answers + 2; }  // none, answers, invalid
  int n_inbox() const { return n_answers + 3; }      // outside, empty, answers, invalid
  int n_states() const { return n_completed() * n_inbox(); }
  int initial() const { return 0; }

  int transition(int state, int token) const {
    int completed = state / n_inbox();
    int inbox = state % n_inbox();
    if (inbox == 0) {
      if (token == policy::kBoxOpen) inbox = 1;
    } else if (token == policy::kBoxClose) {
      completed = (inbox >= 2 && inbox <= n_answers + 1) ? inbox - 1 : n_answers + 1;
      inbox = 0;
    } else if (token >= policy::kAnswerBase && token < policy::kAnswerBase + n_answers) {
      inbox = inbox == 1 ? 2 + (token - policy::kAnswerBase) : n_answers + 2;
    } else {
      inbox = n_answers + 2;
    }
    return completed * n_inbox() + inbox;
  }

  // -1 when no valid single-answer box was completed.
  int answer(int state) const {
    int completed = state / n_inbox();
    return (completed >= 1 && completed <= n_answers) ? completed - 1 : -1;
  }
};

// Extraction automaton for classification/qa: the last answer-vocabulary token.
struct LastAnswerAutomaton {
  int n_answers;
  int n_states() const { return n_answers + 1; }
  int initial() const { return 0; }
  int transition(int state, int token) const {
    if (token >= policy::kAnswerBase && token < policy::kAnswerBase + n_answers) {
      return 1 + (token - policy::kAnswerBase);
    }
    return state;
  }
  int answer(int state) const { return state - 1; }
};

std::vector<double> one_hot(int index, int dims) {
  std::vector<double> v(dims, 0.0);
  v[index] = 1.0;
  return v;
}

double score_answer(const TaskSpec& spec, const TaskInstance& instance, int answer,
                    const SimilarityProvider& provider, int answer_tokens) {
  if (answer < 0) {
    return 0.0;
  }
  if (spec.kind == TaskKind::kQa) {
    const std::vector<int> answer_seq{answer};
    std::vector<double> predicted = provider.embed(answer_seq, answer_tokens);
    return rewards::qa_reward(predicted, instance.gold_vector);
  }
  const auto& labels = spec.answer_labels;
  if (answer >= static_cast<int>(labels.size())) {
    return 0.0;
  }
  return rewards::classification_reward(labels[answer], labels[instance.gold_answer]);
}

}  // namespace

int extract_answer(const TaskSpec& spec, std::span<const int> tokens) {
  const int n_answers = static_cast<int>(spec.answer_labels.size());
  if (spec.kind == TaskKind::kStringSchema) {
    BoxAutomaton automaton{n_answers};
    int state = automaton.initial();
    for (int t : tokens) {
      if (t == policy::kEos) break;
      state = automaton.transition(state, t);
    }
    return automaton.answer(state);
  }
  LastAnswerAutomaton automaton{n_answers};
  int state = automaton.initial();
  for (int t : tokens) {
    if (t == policy::kEos) break;
    state = automaton.transition(state, t);
  }
  return automaton.answer(state);
}

double evaluate(const TaskSpec& spec, const TaskInstance& instance, std::span<const int> tokens,
                const SimilarityProvider& provider, int answer_tokens) {
  return score_answer(spec, instance, extract_answer(spec, tokens), provider, answer_tokens);
}

std::string render_text(std::span<const int> tokens, const TaskSpec& spec) {
  std::string out;
  for (int t : tokens) {
    switch (t) {
      case policy::kThinkOpen: out += "<think>"; break;
      case policy::kThinkClose: out += "</think>"; break;
      case policy::kBoxOpen: out += "\\boxed{"; break;
      case policy::kBoxClose: out += "}"; break;
      case policy::kEos: break;
      default: {
        const int a = t - policy::kAnswerBase;
        if (a >= 0 && a < static_cast<int>(spec.answer_labels.size())) {
          out += spec.answer_labels[a];
        } else {
          out += "tok" + std::to_string(t);
        }
        break;
      }
    }
  }
  return out;
}

rewards::RewardComponents rollout_reward(const TaskSpec& spec, const TaskInstance& instance,
                                         const policy::RolloutTrace& trace,
                                         const SimilarityProvider& provider, int answer_tokens,
                                         const RewardParams& params) {
  const double task_score = evaluate(spec, instance, trace.tokens, provider, answer_tokens);
  double format_ok = 1.0;
  double length_pen = 0.0;
  if (spec.render_text) {
    format_ok = rewards::format_reward(render_text(trace.tokens, spec));
    length_pen = rewards::length_penalty(trace.length(), params.length);
  }
  return rewards::combine_reward(task_score, format_ok, length_pen, params.w_fmt,
                                 params.lambda_len);
}

double expected_reward_oracle(const TaskSpec& spec, const std::vector<TaskInstance>& pool,
                              const policy::PolicyParams& params, int task_index,
                              int state_bound) {
  if (pool.empty()) {
    throw std::invalid_argument("expected_reward_oracle: empty pool");
  }
  const int n_answers = static_cast<int>(spec.answer_labels.size());
  const int vocab = params.vocab;

  int n_states = 0;
  std::vector<int> transitions;  // [state][token]
  std::vector<int> state_answer;
  if (spec.kind == TaskKind::kStringSchema) {
    BoxAutomaton automaton{n_answers};
    n_states = automaton.n_states();
    transitions.resize(static_cast<std::size_t>(n_states) * vocab);
    state_answer.resize(n_states);
    for (int s = 0; s < n_states; ++s) {
      state_answer[s] = automaton.answer(s);
      for (int t = 0; t < vocab; ++t) {
        transitions[static_cast<std::size_t>(s) * vocab + t] = automaton.transition(s, t);
      }
    }
  } else {
    LastAnswerAutomaton automaton{n_answers};
    n_states = automaton.n_states();
    transitions.resize(static_cast<std::size_t>(n_states) * vocab);
    state_answer.resize(n_states);
    for (int s = 0; s < n_states; ++s) {
      state_answer[s] = automaton.answer(s);
      for (int t = 0; t < vocab; ++t) {
        transitions[static_cast<std::size_t>(s) * vocab + t] = automaton.transition(s, t);
      }
    }
  }
  if (n_states * (vocab + 1) > state_bound) {
    throw std::runtime_error("expected_reward_oracle: enumeration bound exceeded");
  }

  // Pool-averaged terminal score per automaton state.
  BagOfTokenProvider provider;
  std::vector<double> terminal(n_states, 0.0);
  for (int s = 0; s < n_states; ++s) {
    double acc = 0.0;
    for (const TaskInstance& inst : pool) {
      acc += score_answer(spec, inst, state_answer[s], provider, params.vocab -
                                                           policy::kStructuralTokens);
    }
    terminal[s] = acc / static_cast<double>(pool.size());
  }

  // Forward DP over (last token, automaton state); EOS and the length cap
  // both terminate and collect the current state's terminal score.
  const int n_prev = vocab + 1;  // last slot = start of sequence
  std::vector<double> mass(static_cast<std::size_t>(n_prev) * n_states, 0.0);
  mass[static_cast<std::size_t>(vocab) * n_states + 0] = 1.0;
  double expected = 0.0;
  for (int pos = 0; pos < params.max_len; ++pos) {
    std::vector<double> next(mass.size(), 0.0);
    for (int prev = 0; prev < n_prev; ++prev) {
      for (int s = 0; s < n_states; ++s) {
        const double w = mass[static_cast<std::size_t>(prev) * n_states + s];
        if (w == 0.0) continue;
        policy::Context ctx{task_index, params.bucket_of(pos), prev};
        std::vector<double> probs = policy::softmax_row(params, ctx);
        for (int t = 0; t < vocab; ++t) {
          const double p = w * probs[t];
          if (t == policy::kEos) {
            expected += p * terminal[s];
          } else {
            const int ns = transitions[static_cast<std::size_t>(s) * vocab + t];
            next[static_cast<std::size_t>(t) * n_states + ns] += p;
          }
        }
      }
    }
    mass.swap(next);
  }
  for (int prev = 0; prev < n_prev; ++prev) {
    for (int s = 0; s < n_states; ++s) {
      expected += mass[static_cast<std::size_t>(prev) * n_states + s] * terminal[s];
    }
  }
  return expected;
}

}  // namespace harpo::env
