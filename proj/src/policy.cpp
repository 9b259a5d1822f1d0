#include "harpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace harpo::policy {

PolicyParams make_policy(int n_tasks, int n_buckets, int answer_tokens, int max_len) {
  if (n_tasks < 1 || n_buckets < 1 || answer_tokens < 1 || max_len < 1) {
    throw std::invalid_argument("make_policy: all dimensions must be positive");
  }
  PolicyParams p;
  p.n_tasks = n_tasks;
  p.n_buckets = n_buckets;
  p.vocab = kStructuralTokens + answer_tokens;
  p.max_len = max_len;
  p.logits.assign(p.size(), 0.0);
  return p;
}

std::vector<double> log_softmax_row(const PolicyParams& params, const Context& ctx) {
  auto row = params.row(ctx);
  double max_logit = row[0];
  for (double l : row) max_logit = std::max(max_logit, l);
  double sum = 0.0;
  for (double l : row) sum += std::exp(l - max_logit);
  const double log_z = max_logit + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - log_z;
  return out;
}

std::vector<double> softmax_row(const PolicyParams& params, const Context& ctx) {
  std::vector<double> out = log_softmax_row(params, ctx);
  for (double& v : out) v = std::exp(v);
  return out;
}

namespace {

void check_token(const PolicyParams& params, int token) {
  if (token < 0 || token >= params.vocab) {
    throw std::invalid_argument("token outside vocabulary: " + std::to_string(token));
  }
}

}  // namespace

RolloutTrace sample_rollout(const PolicyParams& params, int task, std::mt19937_64& rng) {
  RolloutTrace trace;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  int prev = params.vocab;  // start-of-sequence marker
  for (int pos = 0; pos < params.max_len; ++pos) {
    Context ctx{task, params.bucket_of(pos), prev};
    std::vector<double> logp = log_softmax_row(params, ctx);
    const double u = uniform(rng);
    double cdf = 0.0;
    int chosen = params.vocab - 1;
    for (int t = 0; t < params.vocab; ++t) {
      cdf += std::exp(logp[t]);
      if (u < cdf) {
        chosen = t;
        break;
      }
    }
    trace.tokens.push_back(chosen);
    trace.logprobs.push_back(logp[chosen]);
    if (chosen == kEos) {
      break;
    }
    prev = chosen;
  }
  return trace;
}

std::vector<double> log_prob(const PolicyParams& params, int task, std::span<const int> tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  int prev = params.vocab;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    check_token(params, tokens[pos]);
    Context ctx{task, params.bucket_of(static_cast<int>(pos)), prev};
    out.push_back(log_softmax_row(params, ctx)[tokens[pos]]);
    prev = tokens[pos];
  }
  return out;
}

void add_scaled_grad_log_prob(const PolicyParams& params, int task, std::span<const int> tokens,
                              std::span<const double> coeffs, std::vector<double>& grad_out) {
  if (grad_out.size() != params.size()) {
    throw std::invalid_argument("add_scaled_grad_log_prob: gradient table size mismatch");
  }
  if (coeffs.size() != tokens.size()) {
    throw std::invalid_argument("add_scaled_grad_log_prob: coeffs/tokens size mismatch");
  }
  int prev = params.vocab;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    check_token(params, tokens[pos]);
    Context ctx{task, params.bucket_of(static_cast<int>(pos)), prev};
    std::vector<double> probs = softmax_row(params, ctx);
    double* row = grad_out.data() + static_cast<std::size_t>(params.row_index(ctx)) * params.vocab;
    const double c = coeffs[pos];
    for (int t = 0; t < params.vocab; ++t) {
      row[t] -= c * probs[t];
    }
    row[tokens[pos]] += c;
    prev = tokens[pos];
  }
}

std::vector<double> grad_log_prob(const PolicyParams& params, int task,
                                  std::span<const int> tokens) {
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> ones(tokens.size(), 1.0);
  add_scaled_grad_log_prob(params, task, tokens, ones, grad);
  return grad;
}

std::vector<Context> visited_contexts(const PolicyParams& params, int task,
                                      std::span<const int> tokens) {
  std::vector<Context> out;
  int prev = params.vocab;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    out.push_back(Context{task, params.bucket_of(static_cast<int>(pos)), prev});
    prev = tokens[pos];
  }
  return out;
}

PolicyParams snapshot(const PolicyParams& params) { return params; }

double exact_kl(const PolicyParams& p, const PolicyParams& q,
                const std::set<Context>& contexts) {
  if (p.n_tasks != q.n_tasks || p.n_buckets != q.n_buckets || p.vocab != q.vocab) {
    throw std::invalid_argument("exact_kl: policy structure mismatch");
  }
  if (contexts.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (const Context& c : contexts) {
    std::vector<double> lp = log_softmax_row(p, c);
    std::vector<double> lq = log_softmax_row(q, c);
    double kl = 0.0;
    for (int t = 0; t < p.vocab; ++t) {
      kl += std::exp(lp[t]) * (lp[t] - lq[t]);
    }
    total += kl;
  }
  return total / static_cast<double>(contexts.size());
}

std::vector<double> grad_exact_kl(const PolicyParams& p, const PolicyParams& q,
                                  const std::set<Context>& contexts) {
  std::vector<double> grad(p.size(), 0.0);
  if (contexts.empty()) {
    return grad;
  }
  const double scale = 1.0 / static_cast<double>(contexts.size());
  for (const Context& c : contexts) {
    std::vector<double> lp = log_softmax_row(p, c);
    std::vector<double> lq = log_softmax_row(q, c);
    double kl = 0.0;
    for (int t = 0; t < p.vocab; ++t) {
      kl += std::exp(lp[t]) * (lp[t] - lq[t]);
    }
    double* row = grad.data() + static_cast<std::size_t>(p.row_index(c)) * p.vocab;
    for (int t = 0; t < p.vocab; ++t) {
      row[t] += scale * std::exp(lp[t]) * ((lp[t] - lq[t]) - kl);
    }
  }
  return grad;
}

nlohmann::json to_json(const PolicyParams& params) {
  return {{"version", 1},
          {"n_tasks", params.n_tasks},
          {"n_buckets", params.n_buckets},
          {"vocab", params.vocab},
          {"max_len", params.max_len},
          {"logits", params.logits}};
}

PolicyParams policy_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) {
    throw std::runtime_error("unsupported policy version");
  }
  PolicyParams p;
  p.n_tasks = j.at("n_tasks").get<int>();
  p.n_buckets = j.at("n_buckets").get<int>();
  p.vocab = j.at("vocab").get<int>();
  p.max_len = j.at("max_len").get<int>();
  p.logits = j.at("logits").get<std::vector<double>>();
  if (p.logits.size() != p.size()) {
    throw std::runtime_error("policy logits size mismatch");
  }
  return p;
}

}  // namespace harpo::policy
