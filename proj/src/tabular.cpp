#include "mpcrl/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mpcrl/envs.hpp"

namespace mpcrl {

QTable::QTable(int n_states, int n_actions, double learning_rate, double epsilon)
    : n_states_(n_states), n_actions_(n_actions), alpha_(learning_rate), epsilon_(epsilon) {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("q-table needs states and actions");
  if (!(learning_rate >= 0.0 && learning_rate <= 1.0)) throw std::invalid_argument("learning rate must lie in [0, 1]");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  values_.assign(static_cast<std::size_t>(n_states) * static_cast<std::size_t>(n_actions), 0.0);
}

std::size_t QTable::index(int s, int a) const {
  if (s < 0 || s >= n_states_ || a < 0 || a >= n_actions_) throw std::out_of_range("q-table index out of range");
  return static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) + static_cast<std::size_t>(a);
}

double QTable::max_value(int s) const { return (*this)(s, greedy(s)); }

int QTable::greedy(int s) const {
  int best = 0;
  double best_value = (*this)(s, 0);
  for (int a = 1; a < n_actions_; ++a) {
    const double v = (*this)(s, a);
    if (v > best_value) {
      best = a;
      best_value = v;
    }
  }
  return best;
}

int epsilon_greedy(const QTable& q, int s, Rng& rng) {
  if (q.epsilon() > 0.0 && rng.uniform() < q.epsilon()) {
    return static_cast<int>(rng.index(static_cast<std::uint64_t>(q.actions())));
  }
  return q.greedy(s);
}

double q_update(QTable& q, const TabularTransition& t, DiscountSpec d) {
  const double bootstrap = t.done ? 0.0 : d.gamma() * q.max_value(t.next_state);
  const double td = t.reward + bootstrap - q(t.state, t.action);
  q(t.state, t.action) += q.learning_rate() * td;
  return td;
}

double ntd_target(std::span<const TabularTransition> segment, const QTable& q, DiscountSpec d,
                  std::size_t horizon) {
  if (segment.empty()) throw std::invalid_argument("n-step target needs at least one transition");
  double target = 0.0;
  double weight = 1.0;
  for (std::size_t i = 0; i < segment.size(); ++i) {
    target += weight * segment[i].reward;
    weight *= d.gamma();
    if (segment[i].done) return target;
  }
  if (segment.size() < horizon) {
    throw std::invalid_argument("incomplete segment: " + std::to_string(segment.size()) + " of " +
                                std::to_string(horizon) + " steps without termination");
  }
  return target + weight * q.max_value(segment.back().next_state);
}

TabularModel::TabularModel(int n_states, int n_actions)
    : n_states_(n_states),
      n_actions_(n_actions),
      table_(static_cast<std::size_t>(n_states) * static_cast<std::size_t>(n_actions)) {}

void TabularModel::update(const TabularTransition& t) {
  if (t.state < 0 || t.state >= n_states_ || t.action < 0 || t.action >= n_actions_) {
    throw std::out_of_range("tabular model index out of range");
  }
  auto& slot = table_[static_cast<std::size_t>(t.state * n_actions_ + t.action)];
  if (!slot) order_.emplace_back(t.state, t.action);
  slot = Entry{t.next_state, t.reward, t.done};
}

std::optional<TabularModel::Entry> TabularModel::lookup(int s, int a) const {
  if (s < 0 || s >= n_states_ || a < 0 || a >= n_actions_) return std::nullopt;
  return table_[static_cast<std::size_t>(s * n_actions_ + a)];
}

std::vector<TabularTransition> tabular_rollout(const TabularModel& m, const QTable& q, int s0, int a0,
                                               int horizon) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be at least 1");
  std::vector<TabularTransition> branch;
  int s = s0;
  int a = a0;
  for (int n = 0; n < horizon; ++n) {
    const auto e = m.lookup(s, a);
    if (!e) break;
    branch.push_back({s, a, e->reward, e->next_state, e->done});
    if (e->done) break;
    s = e->next_state;
    a = q.greedy(s);
  }
  return branch;
}

void dyna_mpc_train_step(QTable& q, TabularModel& m, const TabularTransition& t, int horizon,
                         DiscountSpec d) {
  m.update(t);
  const auto branch = tabular_rollout(m, q, t.state, t.action, horizon);
  if (branch.empty()) {
    q_update(q, t, d);
    return;
  }
  for (std::size_t i = branch.size(); i-- > 0;) {
    const auto& step = branch[i];
    double bootstrap = 0.0;
    if (!step.done) {
      bootstrap = i + 1 < branch.size() ? q(branch[i + 1].state, branch[i + 1].action)
                                        : q.max_value(step.next_state);
    }
    q(step.state, step.action) +=
        q.learning_rate() * (step.reward + d.gamma() * bootstrap - q(step.state, step.action));
  }
}

void dyna_q_train_step(QTable& q, TabularModel& m, const TabularTransition& t, int planning_steps,
                       DiscountSpec d, Rng& rng) {
  q_update(q, t, d);
  m.update(t);
  const auto& pairs = m.visited_pairs();
  for (int k = 0; k < planning_steps; ++k) {
    const auto [s, a] = pairs[static_cast<std::size_t>(rng.index(pairs.size()))];
    const auto e = *m.lookup(s, a);
    q_update(q, {s, a, e.reward, e.next_state, e.done}, d);
  }
}

NStepTd::NStepTd(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("n-step TD needs n >= 1");
}

void NStepTd::update_front(QTable& q, DiscountSpec d, std::size_t horizon) {
  const auto& first = pending_.front();
  const double target = ntd_target(pending_, q, d, horizon);
  q(first.state, first.action) += q.learning_rate() * (target - q(first.state, first.action));
  pending_.erase(pending_.begin());
}

void NStepTd::observe(QTable& q, const TabularTransition& t, DiscountSpec d) {
  pending_.push_back(t);
  if (t.done) {
    end_episode(q, d);
    return;
  }
  if (pending_.size() == n_) update_front(q, d, n_);
}

void NStepTd::end_episode(QTable& q, DiscountSpec d) {
  while (!pending_.empty()) update_front(q, d, pending_.size());
}

double cliff_greedy_return(const QTable& q, int step_cap) {
  GridState s = kCliffStart;
  double total = 0.0;
  for (int i = 0; i < step_cap; ++i) {
    const auto r = cliff_step(s, static_cast<CliffAction>(q.greedy(grid_index(s))));
    total += r.reward;
    s = r.next;
    if (r.done) break;
  }
  return total;
}

std::vector<TabularEpisode> train_cliff(const TabularAgentConfig& cfg, int episodes, int step_cap,
                                        Rng& rng, QTable* final_table) {
  const DiscountSpec d(cfg.gamma);
  QTable q(kCliffStates, kCliffActions, cfg.learning_rate, cfg.epsilon);
  TabularModel model(kCliffStates, kCliffActions);
  NStepTd ntd(static_cast<std::size_t>(std::max(cfg.horizon, 1)));
  CliffWalk env(step_cap);

  std::vector<TabularEpisode> curve;
  curve.reserve(static_cast<std::size_t>(std::max(episodes, 0)));
  for (int e = 0; e < episodes; ++e) {
    TabularEpisode ep;
    int s = env.reset();
    int branched = 0;
    while (true) {
      const int a = epsilon_greedy(q, s, rng);
      const auto r = env.step(a);
      const TabularTransition t{s, a, r.reward, r.next_state, r.terminal};
      const double td = t.reward + (t.done ? 0.0 : cfg.gamma * q.max_value(t.next_state)) - q(s, a);
      ep.mean_sq_td_error += td * td;

      switch (cfg.kind) {
        case TabularAgentKind::QLearning: q_update(q, t, d); break;
        case TabularAgentKind::NStepTd: ntd.observe(q, t, d); break;
        case TabularAgentKind::DynaQ: dyna_q_train_step(q, model, t, cfg.planning_steps, d, rng); break;
        case TabularAgentKind::DynaMpc:
          dyna_mpc_train_step(q, model, t, cfg.horizon, d);
          if (cfg.horizon >= 2 && !t.done && model.visited(t.next_state, q.greedy(t.next_state))) ++branched;
          break;
      }
      ep.train_return += r.reward;
      ++ep.steps;
      s = r.next_state;
      if (r.terminal || r.truncated) break;
    }
    if (cfg.kind == TabularAgentKind::NStepTd) ntd.end_episode(q, d);
    ep.mean_sq_td_error /= ep.steps;
    ep.branch_fraction = static_cast<double>(branched) / ep.steps;
    ep.greedy_return = cliff_greedy_return(q);
    curve.push_back(ep);
  }
  if (final_table) *final_table = q;
  return curve;
}

std::optional<int> episodes_to_optimal(std::span<const TabularEpisode> curve, double optimum) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].greedy_return == optimum) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

}  // namespace mpcrl
