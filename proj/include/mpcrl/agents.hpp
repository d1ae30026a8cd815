#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcrl/approx.hpp"
#include "mpcrl/core.hpp"
#include "mpcrl/envmodel.hpp"
#include "mpcrl/envs.hpp"

namespace mpcrl {

enum class ActionKind { Discrete, Continuous };

// ---------------------------------------------------------------------------
// Value targets and losses.
//
// Discrete critics map s to one value per action; continuous critics map the
// stacked [s; a] to a single value.

/// Q(s, a) for each column.
Vector q_values(const Mlp& critic, ActionKind kind, const Matrix& states, const Matrix& actions);

/// max_a Q(s, a) for discrete critics, Q(s, actor(s)) for continuous ones.
Vector state_values(const Mlp& critic, ActionKind kind, const Mlp* actor, const Matrix& states);

/// Greedy discrete action per column, ties to the lowest index (1 x B).
Matrix greedy_actions(const Mlp& critic, const Matrix& states);

/// y = r + gamma * V_target(s'), bootstrap dropped on done.
Vector td_target(const TransitionBatch& batch, const Mlp& target_critic, ActionKind kind,
                 const Mlp* target_actor, DiscountSpec d);

/// Multi-step targets along one predicted branch:
///   y_n = sum_{i=n}^{L-1} gamma^{i-n} r_i + gamma^{L-n} tip_value,  n < L,
/// where L = rewards.size(). The tip term is dropped when `terminal`.
/// Throws std::invalid_argument ("truncated branch") when L < horizon and the
/// branch is not terminal.
std::vector<double> mpc_q_targets(std::span<const double> rewards, double tip_value, bool terminal,
                                  int horizon, DiscountSpec d);

struct LossAndGradient {
  double loss = 0.0;
  MlpGradient grad;
};

/// mean_b (Q(s_b, a_b) - y_b)^2.
LossAndGradient critic_loss(const Mlp& critic, ActionKind kind, const Matrix& states, const Matrix& actions,
                            const Vector& targets);

/// (1/B) sum_b sum_{n < length_b} gamma^n (Q(s_{k+n}, a_{k+n}) - y_{k+n})^2.
/// `targets` is horizon x B; entries past a column's length are ignored.
LossAndGradient mpc_critic_loss(const Branch& branch, const Matrix& targets, const Mlp& critic, ActionKind kind,
                                DiscountSpec d);

/// mean_b -Q(s_b, actor(s_b)); gradient with respect to the actor only.
LossAndGradient actor_loss(const Matrix& states, const Mlp& actor, const Mlp& critic);

// ---------------------------------------------------------------------------
// Deep agents.

enum class DeepAgentKind { Dqn, Ddpg };

struct AgentConfig {
  int horizon = 1;  // N; ignored without a model
  double gamma = 0.98;
  double epsilon = 0.01;  // discrete exploration
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 10000;
  double critic_lr = 2e-3;
  double actor_lr = 3e-4;
  double model_lr = 2e-3;
  ModelKind model = ModelKind::None;
  double lambda = 1.0;
  double epsilon_m = 0.01;
  double gate_smoothing = 0.9;
  double zeta = 0.01;         // target blend factor
  double noise_sigma = 0.1;   // continuous exploration, as a fraction of the action bound
  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::size_t> model_hidden{64, 64};

  bool operator==(const AgentConfig&) const = default;
};

struct StepReport {
  Transition transition;
  bool episode_end = false;
  bool trained = false;
  bool gate_open = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  std::optional<ModelLossReport> model_loss;  // post-step minibatch loss
  std::size_t fallback_columns = 0;           // samples trained with the one-step target
};

/// DQN / DDPG with an optional learned model. With a model and an open gate,
/// critic updates use N-step predicted branches and multi-step targets;
/// otherwise the one-step target. Model initialization draws from a separate
/// random stream, so a model whose gate never opens leaves the agent's
/// trajectory identical to the model-free baseline.
class DeepAgent {
 public:
  DeepAgent(DeepAgentKind kind, AgentConfig config, const Environment& env, std::uint64_t seed);

  DeepAgentKind kind() const { return kind_; }
  ActionKind action_kind() const { return action_kind_; }
  const AgentConfig& config() const { return config_; }

  /// Discrete: epsilon-greedy (greedy when !explore). Continuous: actor output
  /// plus Gaussian noise when exploring, clipped to the bounds.
  Vector act(const Vector& state, Rng& rng, bool explore) const;
  Vector policy(const Vector& state) const;

  void begin_episode(Environment& env, Rng& env_rng);
  /// One real environment step plus, once the buffer holds a batch, one
  /// update of model, critic, actor and targets.
  StepReport train_step(Environment& env);

  const Mlp& critic() const { return critic_; }
  Mlp& critic() { return critic_; }
  const Mlp* actor() const { return actor_ ? &*actor_ : nullptr; }
  const TargetNet& target_critic() const { return target_critic_; }
  const EnvModel* model() const { return model_.get(); }
  const ModelGate& gate() const { return gate_; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  Matrix branch_policy(const Matrix& states) const;
  double update_critic(const TransitionBatch& batch, bool use_model, const Environment& env,
                       std::size_t& fallback_columns);

  DeepAgentKind kind_;
  ActionKind action_kind_;
  AgentConfig config_;
  ActionSpace space_;
  DiscountSpec discount_;

  Rng rng_;
  Mlp critic_;
  TargetNet target_critic_;
  Adam critic_opt_;
  std::optional<Mlp> actor_;
  TargetNet target_actor_;
  Adam actor_opt_;

  std::unique_ptr<EnvModel> model_;
  ModelGate gate_;
  RunningStats state_stats_;
  RunningStats reward_stats_;

  ReplayBuffer buffer_;
  Vector current_;
};

struct Evaluation {
  std::vector<double> returns;
  std::optional<double> mean;  // absent for zero episodes
};

/// Noiseless rollouts of `policy`; returns undiscounted episode sums.
Evaluation evaluate(const std::function<Vector(const Vector&)>& policy, Environment& env, int episodes, Rng& rng);
Evaluation evaluate(const DeepAgent& agent, Environment& env, int episodes, Rng& rng);

/// Saved policy: the networks needed to act greedily.
struct PolicyCheckpoint {
  std::string agent;  // "dqn" or "ddpg"
  std::string env;
  Mlp critic;
  std::optional<Mlp> actor;

  Vector act(const Vector& state) const;
};

/// Text format:
///   mpcrl-policy v1
///   agent <dqn|ddpg>
///   env <id>
///   critic
///   <mlp v1 block>
///   [actor
///   <mlp v1 block>]
void write_policy(std::ostream& out, const DeepAgent& agent, const std::string& env_id);
PolicyCheckpoint read_policy(std::istream& in);

}  // namespace mpcrl
