#include "mpcrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mpcrl/errors.hpp"

namespace mpcrl {

TransitionBatch make_batch(std::span<const Transition> transitions) {
  TransitionBatch batch;
  if (transitions.empty()) return batch;
  const auto n = static_cast<Eigen::Index>(transitions.size());
  const auto& first = transitions.front();
  batch.states.resize(first.state.size(), n);
  batch.actions.resize(first.action.size(), n);
  batch.rewards.resize(n);
  batch.next_states.resize(first.next_state.size(), n);
  batch.done.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = transitions[static_cast<std::size_t>(j)];
    batch.states.col(j) = t.state;
    batch.actions.col(j) = t.action;
    batch.rewards(j) = t.reward;
    batch.next_states.col(j) = t.next_state;
    batch.done(j) = t.done ? 1.0 : 0.0;
  }
  return batch;
}

DiscountSpec::DiscountSpec(double gamma) : gamma_(gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("discount factor must lie in [0, 1), got " + std::to_string(gamma));
  }
}

double discounted_return(std::span<const double> rewards, DiscountSpec discount) {
  double total = 0.0;
  double weight = 1.0;
  for (double r : rewards) {
    total += weight * r;
    weight *= discount.gamma();
  }
  return total;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  entries_.reserve(std::min<std::size_t>(capacity, 1u << 16));
}

void ReplayBuffer::push(Transition t) {
  if (t.state.size() != t.next_state.size()) {
    throw ShapeError("transition state has " + std::to_string(t.state.size()) +
                     " components but next_state has " + std::to_string(t.next_state.size()));
  }
  if (!std::isfinite(t.reward)) throw std::invalid_argument("transition reward is not finite");
  if (!entries_.empty()) {
    const auto& ref = entries_.front();
    if (ref.state.size() != t.state.size() || ref.action.size() != t.action.size()) {
      throw ShapeError("transition shape (" + std::to_string(t.state.size()) + ", " +
                       std::to_string(t.action.size()) + ") does not match buffer shape (" +
                       std::to_string(ref.state.size()) + ", " + std::to_string(ref.action.size()) + ")");
    }
  }
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(t));
    return;
  }
  entries_[cursor_] = std::move(t);
  cursor_ = (cursor_ + 1) % capacity_;
}

const Transition& ReplayBuffer::operator[](std::size_t i) const {
  if (i >= entries_.size()) throw std::out_of_range("replay buffer index out of range");
  if (!full()) return entries_[i];
  return entries_[(cursor_ + i) % capacity_];
}

std::optional<std::vector<std::size_t>> ReplayBuffer::sample_indices(std::size_t batch_size,
                                                                     Rng& rng) const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (batch_size > entries_.size()) return std::nullopt;
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.index(entries_.size()));
  return idx;
}

std::optional<std::vector<Transition>> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  auto idx = sample_indices(batch_size, rng);
  if (!idx) return std::nullopt;
  std::vector<Transition> out;
  out.reserve(batch_size);
  for (auto i : *idx) out.push_back(entries_[i]);
  return out;
}

std::optional<TransitionBatch> ReplayBuffer::sample_batch(std::size_t batch_size, Rng& rng) const {
  auto idx = sample_indices(batch_size, rng);
  if (!idx) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(batch_size);
  const auto& first = entries_.front();
  TransitionBatch batch;
  batch.states.resize(first.state.size(), n);
  batch.actions.resize(first.action.size(), n);
  batch.rewards.resize(n);
  batch.next_states.resize(first.next_state.size(), n);
  batch.done.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = entries_[(*idx)[static_cast<std::size_t>(j)]];
    batch.states.col(j) = t.state;
    batch.actions.col(j) = t.action;
    batch.rewards(j) = t.reward;
    batch.next_states.col(j) = t.next_state;
    batch.done(j) = t.done ? 1.0 : 0.0;
  }
  return batch;
}

void RunningStats::push(const Vector& x) {
  if (count_ == 0 && mean_.size() == 0) {
    mean_ = Vector::Zero(x.size());
    m2_ = Vector::Zero(x.size());
  }
  if (x.size() != mean_.size()) throw ShapeError("running stats dimension mismatch");
  ++count_;
  const Vector delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.cwiseProduct(x - mean_);
}

Vector RunningStats::stddev(double min_std) const {
  if (count_ == 0) return Vector::Constant(mean_.size(), 1.0);
  Vector var = m2_ / static_cast<double>(count_);
  return var.cwiseSqrt().cwiseMax(min_std);
}

}  // namespace mpcrl
