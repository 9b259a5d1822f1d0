#include "harpo/config.hpp"

#include <cmath>
#include <stdexcept>

namespace harpo {

std::string RunConfig::effective_run_id() const {
  if (!run_id.empty()) {
    return run_id;
  }
  return suite.preset + "-" + adv::to_string(estimator) + "-s" + std::to_string(seed);
}

int RunConfig::steps_per_epoch(int n_tasks) const {
  const int total = n_tasks * suite.instances_per_task;
  return (total + effective_batch - 1) / effective_batch;
}

int RunConfig::max_steps(int n_tasks) const { return max_epochs * steps_per_epoch(n_tasks); }

void RunConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("config: group_size must be >= 2");
  if (!(epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be positive");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("config: clip_eps must lie in (0,1)");
  }
  if (beta_rho < 0.0 || beta_rho >= 1.0 || beta_s < 0.0 || beta_s >= 1.0) {
    throw std::invalid_argument("config: beta_rho and beta_s must lie in [0,1)");
  }
  if (effective_batch < 1 || mini_batch < 1 || effective_batch % mini_batch != 0) {
    throw std::invalid_argument("config: mini_batch must divide effective_batch");
  }
  if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
  if (validation_every < 1) throw std::invalid_argument("config: validation_every must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (passes_per_batch < 1) throw std::invalid_argument("config: passes_per_batch must be >= 1");
  if (w_fmt < 0.0 || w_fmt > 1.0) throw std::invalid_argument("config: w_fmt must lie in [0,1]");
  if (lambda_len < 0.0) throw std::invalid_argument("config: lambda_len must be >= 0");
  if (length.buffer < 1 || length.l_max <= length.buffer) {
    throw std::invalid_argument("config: need l_max > buffer >= 1");
  }
  if (policy_max_len < 1 || policy_buckets < 1) {
    throw std::invalid_argument("config: policy dimensions must be positive");
  }
}

adv::ModulationConfig RunConfig::modulation_config() const {
  adv::ModulationConfig mc;
  mc.variant = estimator;
  mc.beta_rho = beta_rho;
  mc.beta_s = beta_s;
  mc.reference_source = reference_source;
  mc.s_min = factor_s_min;
  mc.s_max = factor_s_max;
  return mc;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json suite = {{"preset", c.suite.preset},
                          {"instances_per_task", c.suite.instances_per_task},
                          {"answer_tokens", c.suite.answer_tokens}};
  if (!c.suite.tasks.empty()) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : c.suite.tasks) tasks.push_back(env::to_json(t));
    suite["tasks"] = tasks;
  }
  return {{"version", 1},
          {"run_id", c.run_id},
          {"estimator", adv::to_string(c.estimator)},
          {"seed", c.seed},
          {"suite", suite},
          {"epsilon", c.epsilon},
          {"beta_rho", c.beta_rho},
          {"beta_s", c.beta_s},
          {"reference_source",
           c.reference_source == adv::ReferenceSource::kSmoothed ? "smoothed" : "raw"},
          {"factor_clamp", {{"s_min", c.factor_s_min}, {"s_max", c.factor_s_max}}},
          {"clip_eps", c.clip_eps},
          {"kl_beta", c.kl_beta},
          {"group_size", c.group_size},
          {"effective_batch", c.effective_batch},
          {"mini_batch", c.mini_batch},
          {"passes_per_batch", c.passes_per_batch},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"rewards",
           {{"w_fmt", c.w_fmt},
            {"lambda_len", c.lambda_len},
            {"l_max", c.length.l_max},
            {"buffer", c.length.buffer}}},
          {"policy", {{"max_len", c.policy_max_len}, {"n_buckets", c.policy_buckets}}},
          {"oracle_state_bound", c.oracle_state_bound},
          {"validation_every", c.validation_every},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"dump_advantages_every", c.dump_advantages_every},
          {"task_weights", c.task_weights},
          {"rng", {{"scheme", "counter"}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.value("version", 1) != 1) {
    throw std::runtime_error("unsupported config version");
  }
  c.run_id = j.value("run_id", std::string());
  if (j.contains("estimator")) {
    c.estimator = adv::variant_from_string(j.at("estimator").get<std::string>());
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    c.suite.preset = s.value("preset", c.suite.preset);
    c.suite.instances_per_task = s.value("instances_per_task", c.suite.instances_per_task);
    c.suite.answer_tokens = s.value("answer_tokens", c.suite.answer_tokens);
    if (s.contains("tasks")) {
      for (const auto& t : s.at("tasks")) c.suite.tasks.push_back(env::task_spec_from_json(t));
    }
  }
  c.epsilon = j.value("epsilon", c.epsilon);
  c.beta_rho = j.value("beta_rho", c.beta_rho);
  c.beta_s = j.value("beta_s", c.beta_s);
  if (j.contains("reference_source")) {
    const std::string src = j.at("reference_source").get<std::string>();
    if (src == "smoothed") {
      c.reference_source = adv::ReferenceSource::kSmoothed;
    } else if (src == "raw") {
      c.reference_source = adv::ReferenceSource::kRaw;
    } else {
      throw std::invalid_argument("config: reference_source must be smoothed or raw");
    }
  }
  if (j.contains("factor_clamp")) {
    c.factor_s_min = j.at("factor_clamp").value("s_min", 0.0);
    c.factor_s_max = j.at("factor_clamp").value("s_max", 0.0);
  }
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.group_size = j.value("group_size", c.group_size);
  c.effective_batch = j.value("effective_batch", c.effective_batch);
  c.mini_batch = j.value("mini_batch", c.mini_batch);
  c.passes_per_batch = j.value("passes_per_batch", c.passes_per_batch);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("rewards")) {
    const auto& r = j.at("rewards");
    c.w_fmt = r.value("w_fmt", c.w_fmt);
    c.lambda_len = r.value("lambda_len", c.lambda_len);
    c.length.l_max = r.value("l_max", c.length.l_max);
    c.length.buffer = r.value("buffer", c.length.buffer);
  }
  if (j.contains("policy")) {
    c.policy_max_len = j.at("policy").value("max_len", c.policy_max_len);
    c.policy_buckets = j.at("policy").value("n_buckets", c.policy_buckets);
  }
  c.oracle_state_bound = j.value("oracle_state_bound", c.oracle_state_bound);
  c.validation_every = j.value("validation_every", c.validation_every);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.dump_advantages_every = j.value("dump_advantages_every", c.dump_advantages_every);
  if (j.contains("task_weights")) {
    c.task_weights = j.at("task_weights").get<std::vector<double>>();
  }
  c.validate();
  return c;
}

void apply_override(nlohmann::json& config_json, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must have the form key=value: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  nlohmann::json* node = &config_json;
  std::size_t begin = 0;
  std::vector<std::string> parts;
  while (begin <= path.size()) {
    const auto dot = path.find('.', begin);
    parts.push_back(path.substr(begin, dot == std::string::npos ? dot : dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) {
      throw std::invalid_argument("unknown config key in override: " + path);
    }
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) {
    throw std::invalid_argument("unknown config key in override: " + path);
  }
  nlohmann::json& slot = (*node)[leaf];
  // Parse the value with the existing field's type as a guide.
  if (slot.is_string()) {
    slot = value;
  } else if (slot.is_boolean()) {
    slot = (value == "true" || value == "1");
  } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
    slot = std::stoll(value);
  } else if (slot.is_number_float()) {
    slot = std::stod(value);
  } else {
    slot = nlohmann::json::parse(value);
  }
}

env::Suite build_suite(const RunConfig& config) {
  if (!config.suite.tasks.empty()) {
    env::Suite suite = env::build_suite_from_specs(config.suite.tasks, config.seed,
                                                   config.suite.instances_per_task,
                                                   config.suite.answer_tokens);
    suite.preset = config.suite.preset;
    return suite;
  }
  return env::build_suite(config.suite.preset, config.seed, config.suite.instances_per_task,
                          config.suite.answer_tokens);
}

}  // namespace harpo
