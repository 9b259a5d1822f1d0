#include <cmath>
#include <vector>

#include "doctest.h"
#include "harpo/rewards.hpp"

using namespace harpo::rewards;

TEST_CASE("classification reward is canonicalized exact match") {
  CHECK(classification_reward("joy", "joy") == 1.0);
  CHECK(classification_reward("joy", "anger") == 0.0);
  CHECK(classification_reward("  Joy ", "joy") == 1.0);
  CHECK(classification_reward("JOY\t", " joy") == 1.0);
  CHECK(classification_reward("", "") == 1.0);
  // Mismatched label spaces still compare as strings.
  CHECK(classification_reward("yes", "7") == 0.0);
}

TEST_CASE("qa reward maps cosine into [0,1]") {
  const std::vector<double> v{0.3, -0.2, 1.0};
  const std::vector<double> neg{-0.3, 0.2, -1.0};
  CHECK(qa_reward(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(qa_reward(v, neg) == doctest::Approx(0.0).epsilon(1e-12));
  const std::vector<double> e1{1.0, 0.0};
  const std::vector<double> e2{0.0, 1.0};
  CHECK(qa_reward(e1, e2) == doctest::Approx(0.5).epsilon(1e-12));

  SUBCASE("zero norm is a zero reward, not an error") {
    const std::vector<double> zero{0.0, 0.0};
    CHECK(qa_reward(zero, e1) == 0.0);
    CHECK(qa_reward(e1, zero) == 0.0);
  }
  SUBCASE("symmetry and scale invariance") {
    const std::vector<double> u{2.0, 1.0, 0.0};
    const std::vector<double> w{0.5, -1.0, 2.0};
    CHECK(qa_reward(u, w) == doctest::Approx(qa_reward(w, u)).epsilon(1e-12));
    const std::vector<double> u3{6.0, 3.0, 0.0};
    CHECK(qa_reward(u3, w) == doctest::Approx(qa_reward(u, w)).epsilon(1e-12));
  }
}

TEST_CASE("format reward requires the marker order") {
  CHECK(format_reward("<think>x</think>\\boxed{joy}") == 1);
  CHECK(format_reward("\\boxed{joy}<think>x</think>") == 0);
  CHECK(format_reward("") == 0);
  CHECK(format_reward("<think></think>\\boxed{}") == 1);
  CHECK(format_reward("<think>a</think> filler \\boxed{x} trailing") == 1);
  CHECK(format_reward("</think><think>\\boxed{x}") == 0);
  CHECK(format_reward("<think>x</think>\\boxed{unclosed") == 0);
  // Appending non-marker text never flips a valid schema to 0.
  CHECK(format_reward("<think>x</think>\\boxed{joy} and more words") == 1);
}

TEST_CASE("length penalty piecewise values and continuity") {
  const LengthPenaltyParams p;  // 812 / 128
  CHECK(length_penalty(0, p) == 0.0);
  CHECK(length_penalty(684, p) == 0.0);
  CHECK(length_penalty(748, p) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(length_penalty(812, p) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(length_penalty(813, p) == -1.0);
  CHECK(length_penalty(5000, p) == -1.0);

  SUBCASE("continuity at both breakpoints") {
    const double h = 1e-9;
    CHECK(std::abs(length_penalty(684 - h, p) - length_penalty(684 + h, p)) < 1e-7);
    CHECK(std::abs(length_penalty(812 - h, p) - length_penalty(812 + h, p)) < 1e-7);
  }
  SUBCASE("small desk-scale params") {
    const LengthPenaltyParams toy{10, 4};
    CHECK(length_penalty(6, toy) == 0.0);
    CHECK(length_penalty(8, toy) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(length_penalty(11, toy) == -1.0);
  }
}

TEST_CASE("combined reward arithmetic and range") {
  const RewardComponents best = combine_reward(1.0, 1.0, 0.0, 0.2, 0.75);
  CHECK(best.total == doctest::Approx(1.0).epsilon(1e-12));
  const RewardComponents worst = combine_reward(0.0, 0.0, -1.0, 0.2, 0.75);
  CHECK(worst.total == doctest::Approx(-0.75).epsilon(1e-12));
  CHECK(combine_reward(0.0, 0.0, 0.0, 0.2, 0.75).total == 0.0);

  const RewardComponents r = combine_reward(0.6, 1.0, -0.25, 0.2, 0.75);
  CHECK(r.task_score == 0.6);
  CHECK(r.format_ok == 1.0);
  CHECK(r.length_penalty == -0.25);
  CHECK(r.total == doctest::Approx(0.8 * 0.6 + 0.2 - 0.75 * 0.25).epsilon(1e-12));
}
