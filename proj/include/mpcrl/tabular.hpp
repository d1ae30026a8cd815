#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mpcrl/core.hpp"
#include "mpcrl/random.hpp"

namespace mpcrl {

struct TabularTransition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;
};

/// Dense action-value table; unvisited entries read as 0.
class QTable {
 public:
  QTable(int n_states, int n_actions, double learning_rate, double epsilon);

  int states() const { return n_states_; }
  int actions() const { return n_actions_; }
  double learning_rate() const { return alpha_; }
  double epsilon() const { return epsilon_; }

  double operator()(int s, int a) const { return values_[index(s, a)]; }
  double& operator()(int s, int a) { return values_[index(s, a)]; }

  double max_value(int s) const;
  /// Ties resolve to the lowest action index.
  int greedy(int s) const;

  bool operator==(const QTable&) const = default;

 private:
  std::size_t index(int s, int a) const;

  int n_states_;
  int n_actions_;
  double alpha_;
  double epsilon_;
  std::vector<double> values_;
};

int epsilon_greedy(const QTable& q, int s, Rng& rng);

/// Q(s,a) += alpha [r + gamma max Q(s',.) - Q(s,a)]; no bootstrap on done.
/// Returns the TD error.
double q_update(QTable& q, const TabularTransition& t, DiscountSpec d);

/// sum_{i<n} gamma^i r_i + gamma^n max Q(s_n, .), where n = segment length.
/// A segment ending in done is not bootstrapped. A segment shorter than
/// `horizon` that does not end in done throws std::invalid_argument.
double ntd_target(std::span<const TabularTransition> segment, const QTable& q, DiscountSpec d,
                  std::size_t horizon);

/// Exact deterministic table model P(s,a), R(s,a) plus the terminal flag.
class TabularModel {
 public:
  struct Entry {
    int next_state;
    double reward;
    bool done;
  };

  TabularModel(int n_states, int n_actions);

  void update(const TabularTransition& t);
  std::optional<Entry> lookup(int s, int a) const;
  bool visited(int s, int a) const { return lookup(s, a).has_value(); }
  /// Visited pairs in insertion order.
  const std::vector<std::pair<int, int>>& visited_pairs() const { return order_; }

 private:
  int n_states_;
  int n_actions_;
  std::vector<std::optional<Entry>> table_;
  std::vector<std::pair<int, int>> order_;
};

/// Predicted branch from (s0, a0): later actions are greedy in q. Stops after
/// `horizon` steps, at the first unvisited pair, or after a predicted
/// terminal step. Empty when (s0, a0) is unvisited.
std::vector<TabularTransition> tabular_rollout(const TabularModel& m, const QTable& q, int s0, int a0,
                                               int horizon);

/// Records t in the model, then applies the one-step update along the
/// predicted branch from (t.state, t.action), last step first so value
/// propagates back to the real state. Falls back to q_update on t when the
/// branch is empty.
void dyna_mpc_train_step(QTable& q, TabularModel& m, const TabularTransition& t, int horizon,
                         DiscountSpec d);

/// Dyna-Q: q_update on t, record it, then `planning_steps` updates on
/// uniformly drawn visited pairs.
void dyna_q_train_step(QTable& q, TabularModel& m, const TabularTransition& t, int planning_steps,
                       DiscountSpec d, Rng& rng);

/// n-step TD over the real trajectory: keeps the last n transitions and
/// updates the oldest once its segment is complete.
class NStepTd {
 public:
  explicit NStepTd(std::size_t n);

  void observe(QTable& q, const TabularTransition& t, DiscountSpec d);
  /// Updates the pending transitions at an episode boundary. Segments cut by
  /// truncation bootstrap from their last state.
  void end_episode(QTable& q, DiscountSpec d);

 private:
  void update_front(QTable& q, DiscountSpec d, std::size_t horizon);

  std::size_t n_;
  std::vector<TabularTransition> pending_;
};

enum class TabularAgentKind { QLearning, NStepTd, DynaQ, DynaMpc };

struct TabularAgentConfig {
  TabularAgentKind kind = TabularAgentKind::DynaMpc;
  int horizon = 1;  // n for n-step TD, N for Dyna-MPC
  double learning_rate = 0.1;
  double gamma = 0.9;
  double epsilon = 0.01;
  int planning_steps = 5;  // Dyna-Q only

  bool operator==(const TabularAgentConfig&) const = default;
};

struct TabularEpisode {
  double train_return = 0.0;
  double greedy_return = 0.0;  // return of the greedy policy after the episode
  int steps = 0;
  double mean_sq_td_error = 0.0;
  double branch_fraction = 0.0;  // real steps whose update used a model branch of length >= 2
};

/// Greedy rollout on cliff walking from the start, capped at step_cap steps.
double cliff_greedy_return(const QTable& q, int step_cap = 100);

/// Trains a tabular agent on cliff walking for `episodes` episodes.
std::vector<TabularEpisode> train_cliff(const TabularAgentConfig& cfg, int episodes, int step_cap,
                                        Rng& rng, QTable* final_table = nullptr);

/// First 1-based episode whose greedy return equals `optimum`, or nullopt.
std::optional<int> episodes_to_optimal(std::span<const TabularEpisode> curve, double optimum = -13.0);

}  // namespace mpcrl
