#include "mpcrl/agents.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mpcrl/errors.hpp"

namespace mpcrl {

namespace {

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

Eigen::Index action_index(double stored, Eigen::Index count) {
  const auto a = static_cast<Eigen::Index>(stored);
  if (a < 0 || a >= count) throw std::out_of_range("discrete action index out of range");
  return a;
}

std::vector<std::size_t> layer_plan(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

Vector q_values(const Mlp& critic, ActionKind kind, const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) throw ShapeError("state and action batch sizes differ");
  if (kind == ActionKind::Continuous) return critic.forward(stack(states, actions)).row(0).transpose();
  const Matrix all = critic.forward(states);
  Vector q(states.cols());
  for (Eigen::Index j = 0; j < q.size(); ++j) q(j) = all(action_index(actions(0, j), all.rows()), j);
  return q;
}

Vector state_values(const Mlp& critic, ActionKind kind, const Mlp* actor, const Matrix& states) {
  if (kind == ActionKind::Discrete) return critic.forward(states).colwise().maxCoeff().transpose();
  if (!actor) throw std::invalid_argument("continuous state values need an actor");
  return q_values(critic, kind, states, actor->forward(states));
}

Matrix greedy_actions(const Mlp& critic, const Matrix& states) {
  const Matrix all = critic.forward(states);
  Matrix a(1, all.cols());
  for (Eigen::Index j = 0; j < all.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < all.rows(); ++i) {
      if (all(i, j) > all(best, j)) best = i;
    }
    a(0, j) = static_cast<double>(best);
  }
  return a;
}

Vector td_target(const TransitionBatch& batch, const Mlp& target_critic, ActionKind kind, const Mlp* target_actor,
                 DiscountSpec d) {
  const Vector v = state_values(target_critic, kind, target_actor, batch.next_states);
  return (batch.rewards.array() + d.gamma() * (1.0 - batch.done) * v.array()).matrix();
}

std::vector<double> mpc_q_targets(std::span<const double> rewards, double tip_value, bool terminal, int horizon,
                                  DiscountSpec d) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (rewards.empty() || (!terminal && rewards.size() < static_cast<std::size_t>(horizon))) {
    throw std::invalid_argument("truncated branch: " + std::to_string(rewards.size()) + " of " +
                                std::to_string(horizon) + " predicted steps");
  }
  const std::size_t len = std::min(rewards.size(), static_cast<std::size_t>(horizon));
  std::vector<double> y(len);
  // Backward recursion y_n = r_n + gamma * y_{n+1}, seeded with the tip value.
  double next = terminal ? 0.0 : tip_value;
  for (std::size_t n = len; n-- > 0;) {
    next = rewards[n] + d.gamma() * next;
    y[n] = next;
  }
  return y;
}

LossAndGradient critic_loss(const Mlp& critic, ActionKind kind, const Matrix& states, const Matrix& actions,
                            const Vector& targets) {
  const auto n = states.cols();
  if (targets.size() != n || actions.cols() != n) throw ShapeError("critic loss batch sizes differ");
  Mlp::Tape tape;
  LossAndGradient out;
  if (kind == ActionKind::Continuous) {
    const Matrix q = critic.forward(stack(states, actions), tape);
    const Eigen::RowVectorXd diff = q.row(0) - targets.transpose();
    out.loss = diff.squaredNorm() / static_cast<double>(n);
    out.grad = critic.backward(tape, 2.0 / static_cast<double>(n) * diff).params;
    return out;
  }
  const Matrix all = critic.forward(states, tape);
  Matrix up = Matrix::Zero(all.rows(), all.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto a = action_index(actions(0, j), all.rows());
    const double diff = all(a, j) - targets(j);
    out.loss += diff * diff;
    up(a, j) = 2.0 * diff / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  out.grad = critic.backward(tape, up).params;
  return out;
}

LossAndGradient mpc_critic_loss(const Branch& branch, const Matrix& targets, const Mlp& critic, ActionKind kind,
                                DiscountSpec d) {
  const auto batch = static_cast<Eigen::Index>(branch.batch());
  if (targets.rows() != branch.horizon || targets.cols() != batch) {
    throw ShapeError("targets must be horizon x batch");
  }
  LossAndGradient out;
  out.grad = critic.zero_gradient();
  const double inv_b = 1.0 / static_cast<double>(batch);
  double weight = 1.0;
  for (int n = 0; n < branch.horizon; ++n, weight *= d.gamma()) {
    const auto un = static_cast<std::size_t>(n);
    bool any = false;
    for (Eigen::Index j = 0; j < batch; ++j) any = any || branch.length[static_cast<std::size_t>(j)] > n;
    if (!any) break;

    const Matrix& s = branch.states[un];
    const Matrix& a = branch.actions[un];
    Mlp::Tape tape;
    Matrix up;
    if (kind == ActionKind::Continuous) {
      const Matrix q = critic.forward(stack(s, a), tape);
      up = Matrix::Zero(1, batch);
      for (Eigen::Index j = 0; j < batch; ++j) {
        if (branch.length[static_cast<std::size_t>(j)] <= n) continue;
        const double diff = q(0, j) - targets(n, j);
        out.loss += weight * diff * diff * inv_b;
        up(0, j) = 2.0 * weight * diff * inv_b;
      }
    } else {
      const Matrix all = critic.forward(s, tape);
      up = Matrix::Zero(all.rows(), batch);
      for (Eigen::Index j = 0; j < batch; ++j) {
        if (branch.length[static_cast<std::size_t>(j)] <= n) continue;
        const auto ai = action_index(a(0, j), all.rows());
        const double diff = all(ai, j) - targets(n, j);
        out.loss += weight * diff * diff * inv_b;
        up(ai, j) = 2.0 * weight * diff * inv_b;
      }
    }
    out.grad += critic.backward(tape, up).params;
  }
  return out;
}

LossAndGradient actor_loss(const Matrix& states, const Mlp& actor, const Mlp& critic) {
  const auto n = states.cols();
  Mlp::Tape actor_tape, critic_tape;
  const Matrix actions = actor.forward(states, actor_tape);
  const Matrix q = critic.forward(stack(states, actions), critic_tape);
  LossAndGradient out;
  out.loss = -q.row(0).mean();
  const Matrix up = Matrix::Constant(1, n, -1.0 / static_cast<double>(n));
  const auto back = critic.backward(critic_tape, up);
  const Matrix d_actions = back.input.bottomRows(actions.rows());
  out.grad = actor.backward(actor_tape, d_actions).params;
  return out;
}

// ---------------------------------------------------------------------------

DeepAgent::DeepAgent(DeepAgentKind kind, AgentConfig config, const Environment& env, std::uint64_t seed)
    : kind_(kind),
      action_kind_(kind == DeepAgentKind::Dqn ? ActionKind::Discrete : ActionKind::Continuous),
      config_(std::move(config)),
      space_(env.action_space()),
      discount_(config_.gamma),
      rng_(derive_seed(seed, 1)),
      gate_(config_.epsilon_m, config_.gate_smoothing),
      buffer_(config_.buffer_capacity) {
  if (kind == DeepAgentKind::Dqn && !space_.is_discrete()) throw ConfigError("DQN needs a discrete action space");
  if (kind == DeepAgentKind::Ddpg && space_.is_discrete()) throw ConfigError("DDPG needs a continuous action space");
  if (config_.horizon < 1) throw ConfigError("prediction horizon must be at least 1");
  if (config_.batch_size == 0) throw ConfigError("batch size must be positive");

  const std::size_t obs = env.observation_dim();
  if (action_kind_ == ActionKind::Discrete) {
    critic_ = Mlp(layer_plan(obs, config_.hidden, space_.discrete_count));
  } else {
    critic_ = Mlp(layer_plan(obs + space_.dim(), config_.hidden, 1));
  }
  critic_.initialize(rng_);
  target_critic_ = TargetNet(critic_, config_.zeta);
  critic_opt_ = Adam(critic_, {config_.critic_lr});

  if (action_kind_ == ActionKind::Continuous) {
    actor_ = Mlp(layer_plan(obs, config_.hidden, space_.dim()), OutputActivation::Tanh,
                 space_.high.cwiseAbs().cwiseMax(space_.low.cwiseAbs()));
    actor_->initialize(rng_);
    target_actor_ = TargetNet(*actor_, config_.zeta);
    actor_opt_ = Adam(*actor_, {config_.actor_lr});
  }

  if (config_.model != ModelKind::None) {
    Rng model_rng(derive_seed(seed, 2));
    ModelOptions mo;
    mo.hidden = config_.model_hidden;
    mo.learning_rate = config_.model_lr;
    mo.lambda = config_.lambda;
    model_ = make_env_model(config_.model, obs, ActionEncoder::for_space(space_), mo, model_rng);
    state_stats_ = RunningStats(obs);
    reward_stats_ = RunningStats(1);
  }
}

Vector DeepAgent::policy(const Vector& state) const {
  if (action_kind_ == ActionKind::Discrete) {
    return Vector::Constant(1, greedy_actions(critic_, Matrix(state))(0, 0));
  }
  return actor_->forward(state);
}

Vector DeepAgent::act(const Vector& state, Rng& rng, bool explore) const {
  if (action_kind_ == ActionKind::Discrete) {
    if (explore && config_.epsilon > 0.0 && rng.uniform() < config_.epsilon) {
      return Vector::Constant(1, static_cast<double>(rng.index(space_.discrete_count)));
    }
    return policy(state);
  }
  Vector a = actor_->forward(state);
  if (explore && config_.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double bound = std::max(std::abs(space_.low(i)), std::abs(space_.high(i)));
      a(i) += config_.noise_sigma * bound * rng.normal();
    }
  }
  return a.cwiseMax(space_.low).cwiseMin(space_.high);
}

void DeepAgent::begin_episode(Environment& env, Rng& env_rng) {
  current_ = env.reset(env_rng);
  if (model_) state_stats_.push(current_);
}

Matrix DeepAgent::branch_policy(const Matrix& states) const {
  if (action_kind_ == ActionKind::Discrete) return greedy_actions(critic_, states);
  return actor_->forward(states);
}

double DeepAgent::update_critic(const TransitionBatch& batch, bool use_model, const Environment& env,
                                std::size_t& fallback_columns) {
  const Mlp* target_actor = actor_ ? &target_actor_.net() : nullptr;
  LossAndGradient lg;
  if (!use_model) {
    const Vector y = td_target(batch, target_critic_.net(), action_kind_, target_actor, discount_);
    lg = critic_loss(critic_, action_kind_, batch.states, batch.actions, y);
  } else {
    const int horizon = config_.horizon;
    Branch branch = model_rollout(
        *model_, [this](const Matrix& s) { return branch_policy(s); }, batch.states, batch.actions, horizon,
        [&env](const Vector& s) { return env.is_terminal(s); }, &batch.done);

    const auto cols = static_cast<Eigen::Index>(branch.batch());
    Matrix tips(batch.states.rows(), cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      tips.col(j) = branch.states[static_cast<std::size_t>(branch.length[static_cast<std::size_t>(j)])].col(j);
    }
    const Vector tip_values = state_values(target_critic_.net(), action_kind_, target_actor, tips);

    Matrix targets = Matrix::Zero(horizon, cols);
    std::optional<Vector> real_targets;
    std::vector<double> rewards;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto b = static_cast<std::size_t>(j);
      if (!branch.complete(b) || branch.length[b] == 0) {
        if (!real_targets) real_targets = td_target(batch, target_critic_.net(), action_kind_, target_actor, discount_);
        branch.length[b] = 1;
        targets(0, j) = (*real_targets)(j);
        ++fallback_columns;
        continue;
      }
      rewards.assign(static_cast<std::size_t>(branch.length[b]), 0.0);
      for (int n = 0; n < branch.length[b]; ++n) rewards[static_cast<std::size_t>(n)] = branch.rewards(n, j);
      const auto y = mpc_q_targets(rewards, tip_values(j), branch.terminal[b], horizon, discount_);
      for (std::size_t n = 0; n < y.size(); ++n) targets(static_cast<Eigen::Index>(n), j) = y[n];
    }
    lg = mpc_critic_loss(branch, targets, critic_, action_kind_, discount_);
  }
  if (!std::isfinite(lg.loss)) throw NumericalError("critic loss became non-finite");
  critic_opt_.step(critic_, lg.grad);
  return lg.loss;
}

StepReport DeepAgent::train_step(Environment& env) {
  if (current_.size() == 0) throw std::logic_error("begin_episode must be called before train_step");
  StepReport report;
  const Vector action = act(current_, rng_, true);
  const EnvStep step = env.step(action);
  Transition t{current_, action, step.reward, step.observation, step.terminal};
  buffer_.push(t);
  if (model_) {
    state_stats_.push(step.observation);
    reward_stats_.push(Vector::Constant(1, step.reward));
  }
  current_ = step.observation;
  report.transition = std::move(t);
  report.episode_end = step.done();

  if (buffer_.size() < config_.batch_size) return report;
  const auto batch = *buffer_.sample_batch(config_.batch_size, rng_);
  report.trained = true;

  bool use_model = false;
  if (model_) {
    Normalization norm;
    norm.state_mean = state_stats_.mean();
    norm.state_std = state_stats_.stddev(1e-3);
    norm.reward_mean = reward_stats_.mean()(0);
    norm.reward_std = reward_stats_.stddev(1e-3)(0);
    model_->set_normalization(std::move(norm));
    report.model_loss = model_->train_step(batch);
    gate_.observe(*report.model_loss, model_->kind());
    use_model = gate_.enabled();
  }
  report.gate_open = use_model;
  report.critic_loss = update_critic(batch, use_model, env, report.fallback_columns);

  if (actor_) {
    const auto al = actor_loss(batch.states, *actor_, critic_);
    actor_opt_.step(*actor_, al.grad);
    report.actor_loss = al.loss;
    target_actor_.soft_update(*actor_);
  }
  target_critic_.soft_update(critic_);
  return report;
}

// ---------------------------------------------------------------------------

Evaluation evaluate(const std::function<Vector(const Vector&)>& policy, Environment& env, int episodes, Rng& rng) {
  Evaluation ev;
  for (int e = 0; e < episodes; ++e) {
    Vector s = env.reset(rng);
    double total = 0.0;
    while (true) {
      const auto step = env.step(policy(s));
      total += step.reward;
      s = step.observation;
      if (step.done()) break;
    }
    ev.returns.push_back(total);
  }
  if (!ev.returns.empty()) {
    double sum = 0.0;
    for (double r : ev.returns) sum += r;
    ev.mean = sum / static_cast<double>(ev.returns.size());
  }
  return ev;
}

Evaluation evaluate(const DeepAgent& agent, Environment& env, int episodes, Rng& rng) {
  return evaluate([&agent](const Vector& s) { return agent.policy(s); }, env, episodes, rng);
}

Vector PolicyCheckpoint::act(const Vector& state) const {
  if (actor) return actor->forward(state);
  return Vector::Constant(1, greedy_actions(critic, Matrix(state))(0, 0));
}

void write_policy(std::ostream& out, const DeepAgent& agent, const std::string& env_id) {
  out << "mpcrl-policy v1\n";
  out << "agent " << (agent.kind() == DeepAgentKind::Dqn ? "dqn" : "ddpg") << '\n';
  out << "env " << env_id << '\n';
  out << "critic\n";
  write_mlp(out, agent.critic());
  if (agent.actor()) {
    out << "actor\n";
    write_mlp(out, *agent.actor());
  }
}

PolicyCheckpoint read_policy(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mpcrl-policy v1") throw std::runtime_error("not an mpcrl-policy v1 file");
  PolicyCheckpoint ck;
  auto field = [&](const std::string& key) {
    if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0) {
      throw std::runtime_error("policy checkpoint: expected '" + key + "'");
    }
    return line.substr(key.size() + 1);
  };
  ck.agent = field("agent");
  if (ck.agent != "dqn" && ck.agent != "ddpg") throw std::runtime_error("policy checkpoint: unknown agent " + ck.agent);
  ck.env = field("env");
  if (!std::getline(in, line) || line != "critic") throw std::runtime_error("policy checkpoint: expected critic");
  ck.critic = read_mlp(in);
  if (std::getline(in, line)) {
    if (line != "actor") throw std::runtime_error("policy checkpoint: unexpected '" + line + "'");
    ck.actor = read_mlp(in);
  }
  if (ck.agent == "ddpg" && !ck.actor) throw std::runtime_error("policy checkpoint: ddpg policy without actor");
  return ck;
}

}  // namespace mpcrl
