#include "harpo/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace harpo::rewards {

namespace {

std::string canonicalize(std::string_view label) {
  auto begin = label.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  auto end = label.find_last_not_of(" \t\r\n");
  std::string out(label.substr(begin, end - begin + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

double classification_reward(std::string_view predicted_label, std::string_view gold_label) {
  return canonicalize(predicted_label) == canonicalize(gold_label) ? 1.0 : 0.0;
}

double qa_reward(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    return 0.0;
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    return 0.0;  // degenerate embedding, scored as zero rather than erroring
  }
  double cosine = dot / (std::sqrt(nu) * std::sqrt(nv));
  cosine = std::clamp(cosine, -1.0, 1.0);
  return (cosine + 1.0) / 2.0;
}

int format_reward(std::string_view text) {
  auto think_open = text.find("<think>");
  if (think_open == std::string_view::npos) {
    return 0;
  }
  auto think_close = text.find("</think>", think_open + 7);
  if (think_close == std::string_view::npos) {
    return 0;
  }
  auto box = text.find("\\boxed{", think_close + 8);
  if (box == std::string_view::npos) {
    return 0;
  }
  auto close = text.find('}', box + 7);
  return close == std::string_view::npos ? 0 : 1;
}

double length_penalty(double length, const LengthPenaltyParams& params) {
  const double threshold = static_cast<double>(params.l_max - params.buffer);
  if (length <= threshold) {
    return 0.0;
  }
  if (length <= static_cast<double>(params.l_max)) {
    return (threshold - length) / static_cast<double>(params.buffer);
  }
  return -1.0;
}

RewardComponents combine_reward(double task_score, double format_ok, double length_pen,
                                double w_fmt, double lambda_len) {
  RewardComponents c;
  c.task_score = task_score;
  c.format_ok = format_ok;
  c.length_penalty = length_pen;
  c.total = (1.0 - w_fmt) * task_score + w_fmt * format_ok + lambda_len * length_pen;
  return c;
}

}  // namespace harpo::rewards
