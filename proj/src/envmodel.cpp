#include "mpcrl/envmodel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mpcrl/errors.hpp"

namespace mpcrl {

ActionEncoder ActionEncoder::discrete(std::size_t count) {
  if (count == 0) throw std::invalid_argument("discrete action encoder needs at least one action");
  ActionEncoder e;
  e.count_ = count;
  return e;
}

ActionEncoder ActionEncoder::continuous(Vector scale) {
  if (scale.size() == 0 || (scale.array() <= 0.0).any()) {
    throw std::invalid_argument("continuous action scale must be positive");
  }
  ActionEncoder e;
  e.scale_ = std::move(scale);
  return e;
}

ActionEncoder ActionEncoder::for_space(const ActionSpace& space) {
  if (space.is_discrete()) return discrete(space.discrete_count);
  return continuous(space.high.cwiseAbs().cwiseMax(space.low.cwiseAbs()));
}

std::size_t ActionEncoder::encoded_dim() const {
  return count_ > 0 ? count_ : static_cast<std::size_t>(scale_.size());
}

Matrix ActionEncoder::encode(const Matrix& actions) const {
  if (count_ > 0) {
    if (actions.rows() != 1) throw ShapeError("discrete actions must be stored as a single index");
    Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(count_), actions.cols());
    for (Eigen::Index j = 0; j < actions.cols(); ++j) {
      const auto a = static_cast<Eigen::Index>(actions(0, j));
      if (a < 0 || a >= onehot.rows()) throw std::out_of_range("discrete action index out of range");
      onehot(a, j) = 1.0;
    }
    return onehot;
  }
  if (actions.rows() != scale_.size()) throw ShapeError("continuous action width mismatch");
  return scale_.cwiseInverse().asDiagonal() * actions;
}

Normalization Normalization::identity(std::size_t state_dim) {
  const auto d = static_cast<Eigen::Index>(state_dim);
  return {Vector::Zero(d), Vector::Ones(d), 0.0, 1.0};
}

// ---------------------------------------------------------------------------

EnvModel::EnvModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options)
    : state_dim_(state_dim),
      encoder_(std::move(encoder)),
      options_(std::move(options)),
      norm_(Normalization::identity(state_dim)) {
  if (state_dim == 0) throw ShapeError("model state dimension must be positive");
}

void EnvModel::set_normalization(Normalization n) {
  if (n.state_mean.size() != static_cast<Eigen::Index>(state_dim_) ||
      n.state_std.size() != static_cast<Eigen::Index>(state_dim_)) {
    throw ShapeError("normalization dimension mismatch");
  }
  if ((n.state_std.array() <= 0.0).any() || !(n.reward_std > 0.0)) {
    throw std::invalid_argument("normalization scales must be positive");
  }
  norm_ = std::move(n);
}

void EnvModel::init_optimizers() {
  optimizers_.clear();
  for (const Mlp* net : static_cast<const EnvModel*>(this)->networks()) {
    optimizers_.emplace_back(*net, AdamOptions{options_.learning_rate});
  }
}

Matrix EnvModel::model_input(const Matrix& states, const Matrix& actions) const {
  if (states.rows() != static_cast<Eigen::Index>(state_dim_)) {
    throw ShapeError("model expects states of size " + std::to_string(state_dim_) + ", got " +
                     std::to_string(states.rows()));
  }
  if (states.cols() != actions.cols()) throw ShapeError("state and action batch sizes differ");
  const Matrix encoded = encoder_.encode(actions);
  Matrix input(states.rows() + encoded.rows(), states.cols());
  input.topRows(states.rows()) =
      norm_.state_std.cwiseInverse().asDiagonal() * (states.colwise() - norm_.state_mean);
  input.bottomRows(encoded.rows()) = encoded;
  return input;
}

EnvModel::Targets EnvModel::targets(const TransitionBatch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("model loss needs a non-empty batch");
  const auto inv = norm_.state_std.cwiseInverse().asDiagonal();
  Targets t;
  t.state = inv * (batch.next_states.colwise() - norm_.state_mean);
  if (options_.predict_delta) t.state -= inv * (batch.states.colwise() - norm_.state_mean);
  t.reward = (batch.rewards.array() - norm_.reward_mean) / norm_.reward_std;
  return t;
}

ModelPrediction EnvModel::predict(const Matrix& states, const Matrix& actions) const {
  const Matrix input = model_input(states, actions);
  const RawOutput raw = raw_forward(input);
  Matrix z = raw.state;
  if (options_.predict_delta) z += input.topRows(static_cast<Eigen::Index>(state_dim_));
  ModelPrediction p;
  p.next_states = (norm_.state_std.asDiagonal() * z).colwise() + norm_.state_mean;
  p.rewards = (raw.reward.array() * norm_.reward_std + norm_.reward_mean).matrix();
  return p;
}

std::pair<Vector, double> EnvModel::predict(const Vector& state, const Vector& action) const {
  const auto p = predict(Matrix(state), Matrix(action));
  return {p.next_states.col(0), p.rewards(0)};
}

ModelLossReport EnvModel::train_step(const TransitionBatch& batch) {
  const auto grads = loss_gradients(batch);
  auto nets = networks();
  for (std::size_t i = 0; i < nets.size(); ++i) optimizers_[i].step(*nets[i], grads[i]);
  const auto report = loss(batch);
  if (!std::isfinite(report.state) || !std::isfinite(report.reward) || !std::isfinite(report.combined)) {
    throw NumericalError("model loss became non-finite (state " + std::to_string(report.state) + ", reward " +
                         std::to_string(report.reward) + ")");
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> layer_plan(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

SeparateModel::SeparateModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options, Rng& rng)
    : EnvModel(state_dim, std::move(encoder), std::move(options)) {
  const std::size_t in = state_dim + encoder_.encoded_dim();
  dynamics_ = Mlp(layer_plan(in, options_.hidden, state_dim));
  reward_ = Mlp(layer_plan(in, options_.hidden, 1));
  dynamics_.initialize(rng);
  reward_.initialize(rng);
  init_optimizers();
}

EnvModel::RawOutput SeparateModel::raw_forward(const Matrix& input) const {
  return {dynamics_.forward(input), reward_.forward(input).row(0).transpose()};
}

ModelLossReport SeparateModel::loss(const TransitionBatch& batch) const {
  const auto t = targets(batch);
  const auto raw = raw_forward(model_input(batch.states, batch.actions));
  const double n = static_cast<double>(batch.size());
  ModelLossReport r;
  r.state = (raw.state - t.state).colwise().squaredNorm().sum() / n;
  r.reward = (raw.reward - t.reward).squaredNorm() / n;
  r.combined = r.state + r.reward;
  return r;
}

std::vector<MlpGradient> SeparateModel::loss_gradients(const TransitionBatch& batch) const {
  const auto t = targets(batch);
  const Matrix input = model_input(batch.states, batch.actions);
  const double n = static_cast<double>(batch.size());
  Mlp::Tape dyn_tape, rew_tape;
  const Matrix s_out = dynamics_.forward(input, dyn_tape);
  const Matrix r_out = reward_.forward(input, rew_tape);
  const Matrix s_up = 2.0 / n * (s_out - t.state);
  const Matrix r_up = 2.0 / n * (r_out - t.reward.transpose());
  return {dynamics_.backward(dyn_tape, s_up).params, reward_.backward(rew_tape, r_up).params};
}

CombinedModel::CombinedModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options, Rng& rng)
    : EnvModel(state_dim, std::move(encoder), std::move(options)) {
  if (!(options_.lambda > 0.0)) throw std::invalid_argument("combined model lambda must be positive");
  joint_ = Mlp(layer_plan(state_dim + encoder_.encoded_dim(), options_.hidden, state_dim + 1));
  joint_.initialize(rng);
  init_optimizers();
}

EnvModel::RawOutput CombinedModel::raw_forward(const Matrix& input) const {
  const Matrix out = joint_.forward(input);
  const auto d = static_cast<Eigen::Index>(state_dim_);
  return {out.topRows(d), out.row(d).transpose()};
}

ModelLossReport CombinedModel::loss(const TransitionBatch& batch) const {
  const auto t = targets(batch);
  const auto raw = raw_forward(model_input(batch.states, batch.actions));
  const double n = static_cast<double>(batch.size());
  ModelLossReport r;
  r.state = (raw.state - t.state).colwise().squaredNorm().sum() / n;
  r.reward = (raw.reward - t.reward).squaredNorm() / n;
  r.combined = r.state + options_.lambda * r.reward;
  return r;
}

std::vector<MlpGradient> CombinedModel::loss_gradients(const TransitionBatch& batch) const {
  const auto t = targets(batch);
  const Matrix input = model_input(batch.states, batch.actions);
  const double n = static_cast<double>(batch.size());
  const auto d = static_cast<Eigen::Index>(state_dim_);
  Mlp::Tape tape;
  const Matrix out = joint_.forward(input, tape);
  Matrix up(out.rows(), out.cols());
  up.topRows(d) = 2.0 / n * (out.topRows(d) - t.state);
  up.row(d) = 2.0 * options_.lambda / n * (out.row(d) - t.reward.transpose());
  return {joint_.backward(tape, up).params};
}

std::unique_ptr<EnvModel> make_env_model(ModelKind kind, std::size_t state_dim, ActionEncoder encoder,
                                         ModelOptions options, Rng& rng) {
  switch (kind) {
    case ModelKind::Separate:
      return std::make_unique<SeparateModel>(state_dim, std::move(encoder), std::move(options), rng);
    case ModelKind::Combined:
      return std::make_unique<CombinedModel>(state_dim, std::move(encoder), std::move(options), rng);
    case ModelKind::None: break;
  }
  return nullptr;
}

SeparateLoss model_loss_separate(const SeparateModel& model, const TransitionBatch& batch) {
  const auto r = model.loss(batch);
  return {r.state, r.reward};
}

double model_loss_combined(const CombinedModel& model, const TransitionBatch& batch) {
  return model.loss(batch).combined;
}

// ---------------------------------------------------------------------------

ModelGate::ModelGate(double epsilon_m, double smoothing) : epsilon_m_(epsilon_m), smoothing_(smoothing) {
  if (!(epsilon_m >= 0.0)) throw std::invalid_argument("gate threshold must be non-negative");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw std::invalid_argument("gate smoothing must lie in [0, 1)");
}

void ModelGate::observe(std::span<const double> losses) {
  for (double l : losses) {
    if (!(l >= 0.0)) throw std::invalid_argument("model losses must be non-negative");
  }
  if (losses_.size() != losses.size()) {
    losses_.assign(losses.begin(), losses.end());
    return;
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    losses_[i] = smoothing_ * losses_[i] + (1.0 - smoothing_) * losses[i];
  }
}

void ModelGate::observe(const ModelLossReport& report, ModelKind kind) {
  if (kind == ModelKind::Separate) {
    const double l[2] = {report.state, report.reward};
    observe(l);
  } else if (kind == ModelKind::Combined) {
    const double l[1] = {report.combined};
    observe(l);
  }
}

bool ModelGate::enabled() const {
  if (losses_.empty()) return false;
  for (double l : losses_) {
    if (!(l < epsilon_m_)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

Branch model_rollout(const EnvModel& model, const BranchPolicy& policy, const Matrix& states,
                     const Matrix& actions, int horizon, const TerminalPredicate& is_terminal,
                     const Eigen::ArrayXd* real_done) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be at least 1");
  const auto batch = static_cast<std::size_t>(states.cols());
  if (real_done && static_cast<std::size_t>(real_done->size()) != batch) {
    throw ShapeError("done flags do not match the batch");
  }
  Branch br;
  br.horizon = horizon;
  br.states.reserve(static_cast<std::size_t>(horizon) + 1);
  br.actions.reserve(static_cast<std::size_t>(horizon));
  br.states.push_back(states);
  br.rewards = Matrix::Zero(horizon, states.cols());
  br.length.assign(batch, 0);
  br.terminal.assign(batch, false);
  std::vector<bool> alive(batch, true);

  Matrix cur_a = actions;
  for (int n = 0; n < horizon; ++n) {
    br.actions.push_back(cur_a);
    const Matrix& cur_s = br.states.back();
    const auto pred = model.predict(cur_s, cur_a);
    Matrix next = cur_s;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!alive[b]) continue;
      const auto j = static_cast<Eigen::Index>(b);
      if (!pred.next_states.col(j).allFinite() || !std::isfinite(pred.rewards(j))) {
        alive[b] = false;
        ++br.non_finite;
        continue;
      }
      next.col(j) = pred.next_states.col(j);
      br.rewards(n, j) = pred.rewards(j);
      br.length[b] = n + 1;
      bool term = false;
      if (n == 0 && real_done) {
        term = (*real_done)(j) > 0.5;
      } else if (is_terminal) {
        term = is_terminal(next.col(j));
      }
      if (term) {
        br.terminal[b] = true;
        alive[b] = false;
      }
    }
    br.states.push_back(std::move(next));
    if (n + 1 < horizon) cur_a = policy(br.states.back());
  }
  return br;
}

}  // namespace mpcrl
