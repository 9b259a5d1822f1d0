#pragma once

#include <span>
#include <string_view>

namespace harpo::rewards {

/// Per-rollout reward decomposition. `total` is always recomputable from the
/// parts: (1-w_fmt)*task_score + w_fmt*format_ok + lambda_len*length_penalty.
struct RewardComponents {
  double task_score = 0.0;      // in [0,1]
  double format_ok = 0.0;       // {0,1}
  double length_penalty = 0.0;  // in [-1,0]
  double total = 0.0;
};

struct LengthPenaltyParams {
  int l_max = 812;
  int buffer = 128;
};

/// 1.0 iff the labels are identical after trimming whitespace and case-folding.
double classification_reward(std::string_view predicted_label, std::string_view gold_label);

/// (cos(u,v)+1)/2 in [0,1]. A zero-norm vector yields 0.0 (degenerate embedding).
double qa_reward(std::span<const double> predicted_vector, std::span<const double> gold_vector);

/// 1 iff the text contains "<think>", then "</think>", then "\boxed{" with a
/// matching "}" in that left-to-right order. Ordering-only; text between the
/// markers is allowed.
int format_reward(std::string_view response_text);

/// Overlong-length penalty: 0 below l_max-buffer, linear ramp to -1 at l_max,
/// -1 beyond. Takes a real length so continuity at the breakpoints is testable.
double length_penalty(double length, const LengthPenaltyParams& params);

RewardComponents combine_reward(double task_score, double format_ok, double length_pen,
                                double w_fmt, double lambda_len);

}  // namespace harpo::rewards
