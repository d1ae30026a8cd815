#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mpcrl/random.hpp"

namespace mpcrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One interaction tuple (s, a, r, s', done). Discrete actions are stored as a
/// one-element vector holding the action index.
struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool done = false;
};

/// Column-stacked minibatch; column j is the j-th sampled transition.
struct TransitionBatch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Eigen::ArrayXd done;  // 1.0 where the transition ended the episode

  std::size_t size() const { return static_cast<std::size_t>(rewards.size()); }
};

TransitionBatch make_batch(std::span<const Transition> transitions);

/// Discount factor, 0 <= gamma < 1.
class DiscountSpec {
 public:
  explicit DiscountSpec(double gamma);
  double gamma() const { return gamma_; }

 private:
  double gamma_;
};

/// sum_t gamma^t r_t, t starting at 0.
double discounted_return(std::span<const double> rewards, DiscountSpec discount);

/// Bounded ring store of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  /// Throws ShapeError if dimensions disagree with stored entries or between
  /// state and next_state, std::invalid_argument on a non-finite reward.
  void push(Transition t);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return entries_.size() == capacity_; }
  bool empty() const { return entries_.empty(); }

  /// i = 0 is the oldest retained entry.
  const Transition& operator[](std::size_t i) const;

  /// Storage-order indices of a uniform sample; nullopt when fewer than
  /// batch_size entries are stored.
  std::optional<std::vector<std::size_t>> sample_indices(std::size_t batch_size, Rng& rng) const;

  std::optional<std::vector<Transition>> sample(std::size_t batch_size, Rng& rng) const;
  std::optional<TransitionBatch> sample_batch(std::size_t batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;  // next slot to overwrite once full
  std::vector<Transition> entries_;
};

/// Welford running mean/variance per dimension.
class RunningStats {
 public:
  explicit RunningStats(std::size_t dim = 0) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

  void push(const Vector& x);
  std::size_t count() const { return count_; }
  const Vector& mean() const { return mean_; }
  /// Population standard deviation, floored at min_std; ones before any push.
  Vector stddev(double min_std) const;

 private:
  std::size_t count_ = 0;
  Vector mean_;
  Vector m2_;
};

}  // namespace mpcrl
