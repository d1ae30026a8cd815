#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "mpcrl/analysis.hpp"
#include "mpcrl/random.hpp"

using namespace mpcrl;

namespace {

BoundParams example() {
  BoundParams p;
  p.r_max = 1.0;
  p.gamma = 0.9;
  p.k = 1;
  p.epsilon_pi = 0.1;
  p.epsilon_m = 0.05;
  p.horizon = 2;
  return p;
}

// Term-by-term evaluation kept apart from the library expression.
double direct_bound(const BoundParams& p) {
  const double g = p.gamma, one_minus = 1.0 - g;
  const double shift = std::pow(g, p.k + 1) * p.epsilon_pi / (one_minus * one_minus);
  const double rest = ((std::pow(g, p.k) + 2.0) * p.epsilon_pi + p.horizon * (p.epsilon_m + 2.0 * p.epsilon_pi)) / one_minus;
  return 2.0 * p.r_max * (shift + rest);
}

BoundParams random_params(Rng& rng) {
  BoundParams p;
  p.r_max = rng.uniform(0, 10);
  p.gamma = rng.uniform(0, 0.99);
  p.k = static_cast<int>(rng.index(10));
  p.epsilon_pi = rng.uniform(0, 1);
  p.epsilon_m = rng.uniform(0, 1);
  p.horizon = 1 + static_cast<int>(rng.index(10));
  return p;
}

}  // namespace

TEST(Bound, Example) {
  EXPECT_NEAR(improvement_bound(example()), 32.0, 32.0 * 1e-12);
  EXPECT_NEAR(improvement_bound(example()), direct_bound(example()), 1e-12);
}

TEST(Bound, Zeros) {
  BoundParams p = example();
  p.r_max = 0.0;
  EXPECT_EQ(improvement_bound(p), 0.0);
  p = example();
  p.epsilon_pi = 0.0;
  p.epsilon_m = 0.0;
  EXPECT_EQ(improvement_bound(p), 0.0);
}

TEST(Bound, MatchesDirectEvaluation) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(rng);
    const double c = improvement_bound(p);
    EXPECT_NEAR(c, direct_bound(p), 1e-10 * std::max(1.0, std::abs(c)));
  }
}

TEST(Bound, MonotoneInEachParameter) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(rng);
    const double c = improvement_bound(p);
    BoundParams q = p;
    q.r_max += rng.uniform(0, 5);
    EXPECT_GE(improvement_bound(q), c);
    q = p;
    q.epsilon_pi += rng.uniform(0, 1);
    EXPECT_GE(improvement_bound(q), c);
    q = p;
    q.epsilon_m += rng.uniform(0, 1);
    EXPECT_GE(improvement_bound(q), c);
    q = p;
    q.horizon += 1 + static_cast<int>(rng.index(5));
    EXPECT_GE(improvement_bound(q), c);
  }
}

TEST(Bound, GrowsAsDiscountApproachesOne) {
  BoundParams p = example();
  const double base = improvement_bound(p);
  p.gamma = 0.999;
  EXPECT_GT(improvement_bound(p), base);
}

TEST(Bound, Errors) {
  BoundParams p = example();
  p.gamma = 1.0;
  EXPECT_THROW(improvement_bound(p), std::domain_error);
  p.gamma = 1.5;
  EXPECT_THROW(improvement_bound(p), std::domain_error);
  p = example();
  p.horizon = 0;
  EXPECT_THROW(improvement_bound(p), std::invalid_argument);
  p = example();
  p.epsilon_m = -1.0;
  EXPECT_THROW(improvement_bound(p), std::invalid_argument);
}

TEST(OptimalHorizon, SmallestWins) {
  const auto choice = optimal_horizon(example(), {1, 2, 3});
  EXPECT_EQ(choice.best, 1);
  ASSERT_EQ(choice.objective.size(), 3u);
  EXPECT_LT(choice.objective[0], choice.objective[1]);
  EXPECT_LT(choice.objective[1], choice.objective[2]);
  EXPECT_EQ(optimal_horizon(example(), {3, 2}).best, 2);
}

TEST(OptimalHorizon, TieGoesToSmallest) {
  BoundParams p = example();
  p.epsilon_pi = 0.0;
  const auto choice = optimal_horizon(p, {4, 2, 3});
  EXPECT_EQ(choice.best, 2);
  for (double f : choice.objective) EXPECT_EQ(f, 0.0);
  EXPECT_THROW(optimal_horizon(p, {}), std::invalid_argument);
}
