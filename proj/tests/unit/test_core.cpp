#include <gtest/gtest.h>

#include <deque>
#include <vector>

#include "mpcrl/core.hpp"
#include "mpcrl/errors.hpp"
#include "oracles.hpp"

using namespace mpcrl;

namespace {

Transition scalar_transition(double id, double done = false) {
  return {Vector::Constant(1, id), Vector::Constant(1, 0.0), id, Vector::Constant(1, id + 1), static_cast<bool>(done)};
}

}  // namespace

TEST(ReplayBuffer, RingEviction) {
  ReplayBuffer b(2);
  b.push(scalar_transition(1));
  b.push(scalar_transition(2));
  b.push(scalar_transition(3));
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].reward, 2.0);
  EXPECT_EQ(b[1].reward, 3.0);
}

TEST(ReplayBuffer, FirstPush) {
  ReplayBuffer b(5);
  EXPECT_TRUE(b.empty());
  b.push(scalar_transition(1));
  EXPECT_EQ(b.size(), 1u);
}

TEST(ReplayBuffer, MatchesListSlicingOracle) {
  for (std::size_t cap : {1u, 3u, 10u, 17u}) {
    ReplayBuffer b(cap);
    std::deque<double> oracle;
    for (int i = 0; i < 100; ++i) {
      b.push(scalar_transition(i));
      oracle.push_back(i);
      if (oracle.size() > cap) oracle.pop_front();
      ASSERT_EQ(b.size(), oracle.size());
      for (std::size_t j = 0; j < oracle.size(); ++j) ASSERT_EQ(b[j].reward, oracle[j]);
    }
  }
}

TEST(ReplayBuffer, RejectsShapeMismatch) {
  ReplayBuffer b(4);
  b.push(scalar_transition(1));
  Transition wide{Vector::Zero(2), Vector::Zero(1), 0.0, Vector::Zero(2), false};
  EXPECT_THROW(b.push(wide), ShapeError);
  Transition skew{Vector::Zero(1), Vector::Zero(1), 0.0, Vector::Zero(2), false};
  EXPECT_THROW(ReplayBuffer(3).push(skew), ShapeError);
  EXPECT_THROW(b.push(scalar_transition(std::nan(""))), std::invalid_argument);
}

TEST(ReplayBuffer, SampleMembershipAndSoundness) {
  ReplayBuffer b(10);
  for (int i = 0; i < 10; ++i) b.push(scalar_transition(i, i % 3 == 0));
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto s = b.sample(4, rng);
    ASSERT_TRUE(s);
    ASSERT_EQ(s->size(), 4u);
    for (const auto& t : *s) {
      bool found = false;
      for (std::size_t j = 0; j < b.size(); ++j) {
        const auto& e = b[j];
        found = found || (e.state == t.state && e.action == t.action && e.reward == t.reward &&
                          e.next_state == t.next_state && e.done == t.done);
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(ReplayBuffer, SingleEntryForced) {
  ReplayBuffer b(3);
  b.push(scalar_transition(42));
  Rng rng(1);
  const auto s = b.sample(1, rng);
  ASSERT_TRUE(s);
  EXPECT_EQ((*s)[0].reward, 42.0);
}

TEST(ReplayBuffer, InsufficientSamples) {
  ReplayBuffer b(8);
  b.push(scalar_transition(1));
  Rng rng(1);
  EXPECT_FALSE(b.sample(2, rng));
  EXPECT_FALSE(b.sample_batch(2, rng));
}

TEST(ReplayBuffer, UniformSampling) {
  ReplayBuffer b(5);
  for (int i = 0; i < 5; ++i) b.push(scalar_transition(i));
  Rng rng(11);
  std::vector<long> counts(5, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto idx = b.sample_indices(1, rng);
    ++counts[(*idx)[0]];
  }
  for (long c : counts) EXPECT_NEAR(c, 2000.0, 3.0 * std::sqrt(10000 * 0.2 * 0.8));
  // 4 degrees of freedom; 18.47 is the 0.999 quantile.
  EXPECT_LT(oracle::chi_squared_uniform(counts), 18.47);
}

TEST(ReplayBuffer, BatchLayout) {
  ReplayBuffer b(4);
  for (int i = 0; i < 4; ++i) b.push(scalar_transition(i, i == 2));
  const std::vector<Transition> items{b[1], b[2]};
  const auto batch = make_batch(items);
  EXPECT_EQ(batch.size(), 2u);
  EXPECT_EQ(batch.states(0, 1), 2.0);
  EXPECT_EQ(batch.next_states(0, 0), 2.0);
  EXPECT_EQ(batch.done(0), 0.0);
  EXPECT_EQ(batch.done(1), 1.0);
}

TEST(DiscountedReturn, Examples) {
  const std::vector<double> ones{1, 1, 1};
  EXPECT_NEAR(discounted_return(ones, DiscountSpec(0.9)), 2.71, 1e-12);
  const std::vector<double> r{5, 9, 2};
  EXPECT_EQ(discounted_return(r, DiscountSpec(0.0)), 5.0);
  EXPECT_EQ(discounted_return({}, DiscountSpec(0.5)), 0.0);
}

TEST(DiscountedReturn, Linearity) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> r(1 + rng.index(20));
    for (auto& x : r) x = rng.uniform(-5, 5);
    const double a = rng.uniform(-3, 3);
    std::vector<double> scaled = r;
    for (auto& x : scaled) x *= a;
    const DiscountSpec d(rng.uniform(0, 0.99));
    EXPECT_NEAR(discounted_return(scaled, d), a * discounted_return(r, d), 1e-9);
  }
}

TEST(DiscountSpec, RejectsOutOfRange) {
  EXPECT_THROW(DiscountSpec(1.0), std::invalid_argument);
  EXPECT_THROW(DiscountSpec(-0.1), std::invalid_argument);
  EXPECT_NO_THROW(DiscountSpec(0.0));
}

TEST(Rng, DeterministicStreams) {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.normal(), b.normal());
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_EQ(derive_seed(5, 2), splitmix64(7));
}

TEST(RunningStats, MatchesDirectMoments) {
  RunningStats s(2);
  std::vector<Vector> xs;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    Vector x(2);
    x << rng.uniform(-1, 3), rng.normal();
    xs.push_back(x);
    s.push(x);
  }
  Vector mean = Vector::Zero(2);
  for (const auto& x : xs) mean += x;
  mean /= 50.0;
  Vector var = Vector::Zero(2);
  for (const auto& x : xs) var += (x - mean).cwiseAbs2();
  var /= 50.0;
  EXPECT_LT((s.mean() - mean).norm(), 1e-12);
  EXPECT_LT((s.stddev(0.0) - var.cwiseSqrt()).norm(), 1e-12);
  EXPECT_EQ(RunningStats(1).stddev(0.5)(0), 1.0);
  RunningStats constant(1);
  for (int i = 0; i < 3; ++i) constant.push(Vector::Ones(1));
  EXPECT_EQ(constant.stddev(0.5)(0), 0.5);
}
