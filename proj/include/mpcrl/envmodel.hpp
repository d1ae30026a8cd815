#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mpcrl/approx.hpp"
#include "mpcrl/core.hpp"
#include "mpcrl/envs.hpp"

namespace mpcrl {

enum class ModelKind { None, Separate, Combined };

/// Maps stored actions to network input: one-hot for discrete spaces,
/// division by the bound for continuous ones.
class ActionEncoder {
 public:
  ActionEncoder() = default;
  static ActionEncoder discrete(std::size_t count);
  static ActionEncoder continuous(Vector scale);
  static ActionEncoder for_space(const ActionSpace& space);

  bool is_discrete() const { return count_ > 0; }
  std::size_t encoded_dim() const;
  Matrix encode(const Matrix& actions) const;

 private:
  std::size_t count_ = 0;
  Vector scale_;
};

/// Per-dimension affine normalization used by the model and its losses.
struct Normalization {
  Vector state_mean;
  Vector state_std;
  double reward_mean = 0.0;
  double reward_std = 1.0;

  static Normalization identity(std::size_t state_dim);
};

struct ModelPrediction {
  Matrix next_states;  // state_dim x B
  Vector rewards;      // B
};

/// Latest loss values. Separate models fill state (L_theta) and reward
/// (L_tau); combined models fill all three, `combined` being L_psi.
struct ModelLossReport {
  double state = 0.0;
  double reward = 0.0;
  double combined = 0.0;
};

struct ModelOptions {
  std::vector<std::size_t> hidden{64, 64};
  double learning_rate = 1e-3;
  double lambda = 1.0;        // combined models only
  bool predict_delta = true;  // output is the normalized change in state
};

/// Learned deterministic dynamics and reward predictor. Losses are computed
/// on states normalized per dimension and rewards normalized to unit scale;
/// with the identity normalization they are plain squared errors.
class EnvModel {
 public:
  virtual ~EnvModel() = default;

  virtual ModelKind kind() const = 0;
  std::size_t state_dim() const { return state_dim_; }
  const ActionEncoder& encoder() const { return encoder_; }
  const ModelOptions& options() const { return options_; }

  void set_normalization(Normalization n);
  const Normalization& normalization() const { return norm_; }

  ModelPrediction predict(const Matrix& states, const Matrix& actions) const;
  std::pair<Vector, double> predict(const Vector& state, const Vector& action) const;

  virtual ModelLossReport loss(const TransitionBatch& batch) const = 0;
  /// Gradient of the trained loss (L_theta and L_tau for separate models,
  /// L_psi for combined) with respect to each network, in networks() order.
  virtual std::vector<MlpGradient> loss_gradients(const TransitionBatch& batch) const = 0;
  /// One optimizer step on the applicable loss; returns the post-step loss.
  /// Throws NumericalError on a non-finite loss.
  ModelLossReport train_step(const TransitionBatch& batch);

  virtual std::vector<Mlp*> networks() = 0;
  virtual std::vector<const Mlp*> networks() const = 0;

 protected:
  EnvModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options);

  struct RawOutput {
    Matrix state;  // normalized-space output of the state head
    Vector reward;
  };
  struct Targets {
    Matrix state;
    Vector reward;
  };

  Matrix model_input(const Matrix& states, const Matrix& actions) const;
  Targets targets(const TransitionBatch& batch) const;
  virtual RawOutput raw_forward(const Matrix& input) const = 0;
  void init_optimizers();

  std::size_t state_dim_;
  ActionEncoder encoder_;
  ModelOptions options_;
  Normalization norm_;
  std::vector<Adam> optimizers_;
};

/// P_theta: (s,a) -> s' and R_tau: (s,a) -> r as two networks.
class SeparateModel final : public EnvModel {
 public:
  SeparateModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options, Rng& rng);

  ModelKind kind() const override { return ModelKind::Separate; }
  ModelLossReport loss(const TransitionBatch& batch) const override;
  std::vector<MlpGradient> loss_gradients(const TransitionBatch& batch) const override;
  std::vector<Mlp*> networks() override { return {&dynamics_, &reward_}; }
  std::vector<const Mlp*> networks() const override { return {&dynamics_, &reward_}; }

  Mlp& dynamics() { return dynamics_; }
  Mlp& reward_net() { return reward_; }

 private:
  RawOutput raw_forward(const Matrix& input) const override;

  Mlp dynamics_;
  Mlp reward_;
};

/// PR_psi: (s,a) -> (s', r) as one network with state_dim + 1 outputs.
class CombinedModel final : public EnvModel {
 public:
  CombinedModel(std::size_t state_dim, ActionEncoder encoder, ModelOptions options, Rng& rng);

  ModelKind kind() const override { return ModelKind::Combined; }
  double lambda() const { return options_.lambda; }
  ModelLossReport loss(const TransitionBatch& batch) const override;
  std::vector<MlpGradient> loss_gradients(const TransitionBatch& batch) const override;
  std::vector<Mlp*> networks() override { return {&joint_}; }
  std::vector<const Mlp*> networks() const override { return {&joint_}; }

  Mlp& joint() { return joint_; }

 private:
  RawOutput raw_forward(const Matrix& input) const override;

  Mlp joint_;
};

std::unique_ptr<EnvModel> make_env_model(ModelKind kind, std::size_t state_dim, ActionEncoder encoder,
                                         ModelOptions options, Rng& rng);

struct SeparateLoss {
  double state;   // L_theta
  double reward;  // L_tau
};

/// mean ||s_hat' - s'||^2 and mean (r_hat - r)^2 over the batch.
SeparateLoss model_loss_separate(const SeparateModel& model, const TransitionBatch& batch);
/// mean of ||s_hat' - s'||^2 + lambda (r_hat - r)^2 over the batch.
double model_loss_combined(const CombinedModel& model, const TransitionBatch& batch);

/// Availability gate on the model losses. Losses are exponentially smoothed
/// (new = smoothing * old + (1 - smoothing) * latest; the first observation
/// is taken as is). Enabled iff every applicable smoothed loss is strictly
/// below epsilon_m.
class ModelGate {
 public:
  explicit ModelGate(double epsilon_m, double smoothing = 0.9);

  void observe(std::span<const double> losses);
  /// Separate: (state, reward). Combined: (combined).
  void observe(const ModelLossReport& report, ModelKind kind);
  bool enabled() const;

  double epsilon_m() const { return epsilon_m_; }
  const std::vector<double>& losses() const { return losses_; }

 private:
  double epsilon_m_;
  double smoothing_;
  std::vector<double> losses_;
};

inline bool gate_enabled(const ModelGate& g) { return g.enabled(); }

/// Batched N-step model branch; column b is the branch started from the
/// b-th sampled (s_k, a_k).
struct Branch {
  int horizon = 0;
  std::vector<Matrix> states;   // horizon + 1 entries; states[0] = real s_k, states[n] = s_hat_{k+n}
  std::vector<Matrix> actions;  // horizon entries; actions[0] = real a_k
  Matrix rewards;               // horizon x B, predicted r_hat_{k+n}
  std::vector<int> length;      // valid steps per column
  std::vector<bool> terminal;   // last valid step ended the episode
  std::size_t non_finite = 0;   // columns cut short by a non-finite prediction

  std::size_t batch() const { return length.size(); }
  /// True when column b has all `horizon` steps or ends in a terminal step.
  bool complete(std::size_t b) const { return terminal[b] || length[b] == horizon; }
};

using BranchPolicy = std::function<Matrix(const Matrix& states)>;
using TerminalPredicate = std::function<bool(const Vector& state)>;

/// Step 0 predicts from the real (s_k, a_k); step n >= 1 uses
/// a_{k+n} = policy(s_hat_{k+n}). A column stops at a terminal step (the real
/// done flag for step 0 when given, the predicate afterwards) or before a
/// non-finite prediction. States of stopped columns are held at their last
/// valid value.
Branch model_rollout(const EnvModel& model, const BranchPolicy& policy, const Matrix& states,
                     const Matrix& actions, int horizon, const TerminalPredicate& is_terminal = {},
                     const Eigen::ArrayXd* real_done = nullptr);

}  // namespace mpcrl
