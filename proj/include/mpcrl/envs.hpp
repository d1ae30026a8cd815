#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "mpcrl/core.hpp"
#include "mpcrl/random.hpp"

namespace mpcrl {

// ---------------------------------------------------------------------------
// Cliff walking: 4x12 grid, start (3,0), goal (3,11), cliff row 3 cols 1..10.

inline constexpr int kCliffRows = 4;
inline constexpr int kCliffCols = 12;
inline constexpr int kCliffStates = kCliffRows * kCliffCols;
inline constexpr int kCliffActions = 4;

enum class CliffAction { Up = 0, Down = 1, Left = 2, Right = 3 };

struct GridState {
  int row = 3;
  int col = 0;
  auto operator<=>(const GridState&) const = default;
};

inline constexpr GridState kCliffStart{3, 0};
inline constexpr GridState kCliffGoal{3, 11};

struct CliffStep {
  GridState next;
  double reward;
  bool done;
};

/// Walls clamp the move. Entering the cliff costs -100 and teleports to the
/// start without ending the episode; entering the goal ends it.
CliffStep cliff_step(GridState s, CliffAction a);

inline int grid_index(GridState s) { return s.row * kCliffCols + s.col; }
inline GridState grid_state(int index) { return {index / kCliffCols, index % kCliffCols}; }
bool is_cliff(GridState s);

/// Episodic wrapper with a step cap; states are grid indices.
class CliffWalk {
 public:
  explicit CliffWalk(int step_cap = 1000) : step_cap_(step_cap) {}

  struct Step {
    int next_state;
    double reward;
    bool terminal;
    bool truncated;

    bool done() const { return terminal || truncated; }
  };

  int reset();
  Step step(int action);
  int state() const { return grid_index(state_); }
  int step_cap() const { return step_cap_; }

 private:
  int step_cap_;
  int steps_ = 0;
  GridState state_ = kCliffStart;
};

// ---------------------------------------------------------------------------
// Cart-pole.

struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force = 10.0;
  double dt = 0.02;
  double angle_limit = 12.0 * std::numbers::pi / 180.0;
  double position_limit = 2.4;
  int step_cap = 200;
};

struct CartPoleState {
  double cart_position = 0.0;
  double cart_velocity = 0.0;
  double pole_angle = 0.0;
  double pole_angular_velocity = 0.0;
};

enum class CartPoleAction { PushLeft = 0, PushRight = 1 };

struct CartPoleStep {
  CartPoleState next;
  double reward;
  bool done;  // limits exceeded; the step cap is enforced by CartPoleEnv
};

CartPoleStep cartpole_step(const CartPoleState& s, CartPoleAction a, const CartPoleParams& p = {});
bool cartpole_alive(const CartPoleState& s, const CartPoleParams& p = {});

// ---------------------------------------------------------------------------
// Pendulum swing-up; angle 0 is upright.

struct PendulumParams {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_torque = 2.0;
  double max_speed = 8.0;
  int step_cap = 200;
};

struct PendulumState {
  double angle = 0.0;             // wrapped to (-pi, pi]
  double angular_velocity = 0.0;  // clipped to +-max_speed
};

struct PendulumStep {
  PendulumState next;
  double reward;
  double applied_torque;
  bool done;  // never set here; episodes end at the step cap
};

double wrap_angle(double angle);
PendulumStep pendulum_step(const PendulumState& s, double torque, const PendulumParams& p = {});

// ---------------------------------------------------------------------------
// UAV dynamic obstacle avoidance.

using Vec3 = Eigen::Vector3d;

struct UavParams {
  double rho_o = 1.5;
  double rho_u = 0.1;
  double d_com = 0.5;
  double d_thr = 0.4;
  double r_a = 1.0;
  double completion_bonus = 3.0;
  double r_c = 0.0;
  double r_d = 0.3;
  double speed = 1.0;
  double dt = 0.1;
  double action_bound = std::numbers::pi / 4.0;
  double roll_gain = 0.5;  // coordinated-turn contribution of roll to heading yaw
  Vec3 arena{20.0, 20.0, 10.0};
  double obstacle_speed = 0.3;
  int step_cap = 200;
};

struct UavWorld {
  Vec3 p_u = Vec3::Zero();
  Vec3 p_o = Vec3::Zero();
  Vec3 p_e = Vec3::Zero();
  Vec3 p_s = Vec3::Zero();
  Vec3 v_o = Vec3::Zero();
  UavParams params;

  double d_ou() const { return (p_o - p_u).norm(); }
  double d_eu() const { return (p_e - p_u).norm(); }
  double d_es() const { return (p_e - p_s).norm(); }
};

/// roll, yaw, pitch in radians.
struct UavAction {
  double roll = 0.0;
  double yaw = 0.0;
  double pitch = 0.0;
};

using UavObservation = Eigen::Matrix<double, 9, 1>;

/// [(p_o - p_u)(d_ou - (rho_o + rho_u))/d_ou ; p_e - p_u ; v_o].
/// Throws GeometryError when the centers coincide.
UavObservation uav_observe(const UavWorld& w);

/// Threat term: negative inside rho_o + rho_u + d_thr, zero outside.
double uav_threat_reward(double d_ou, const UavParams& p);
double uav_reward(const UavWorld& w);

UavAction clip_action(const UavAction& a, const UavParams& p);

/// Unit flight direction for an action, relative to the start-to-destination
/// reference frame (forward, left, up).
Vec3 uav_heading(const UavWorld& w, const UavAction& a);

struct UavStep {
  UavWorld next;
  double reward;
  bool done;  // arrival; the step cap is enforced by UavEnv
};

UavStep uav_step(const UavWorld& w, const UavAction& a);

// ---------------------------------------------------------------------------
// Vector-observation environments used by the deep agents.

struct ActionSpace {
  std::size_t discrete_count = 0;  // > 0 for discrete spaces
  Vector low;                      // continuous bounds
  Vector high;

  bool is_discrete() const { return discrete_count > 0; }
  /// Width of the stored action vector (1 for discrete spaces).
  std::size_t dim() const { return is_discrete() ? 1 : static_cast<std::size_t>(low.size()); }
};

struct EnvStep {
  Vector observation;
  double reward = 0.0;
  bool terminal = false;   // true end of the task; stops bootstrapping
  bool truncated = false;  // step cap reached
  bool done() const { return terminal || truncated; }
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual std::size_t observation_dim() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual Vector reset(Rng& rng) = 0;
  /// Discrete actions are passed as a one-element vector holding the index.
  virtual EnvStep step(const Vector& action) = 0;
  /// Known termination predicate on an observation, used to stop model
  /// branches at predicted terminal states.
  virtual bool is_terminal(const Vector& observation) const = 0;
  virtual int step_cap() const = 0;
};

class CartPoleEnv final : public Environment {
 public:
  explicit CartPoleEnv(CartPoleParams p = {}) : params_(p) {}

  std::string id() const override { return "cp"; }
  std::size_t observation_dim() const override { return 4; }
  ActionSpace action_space() const override { return {2, {}, {}}; }
  Vector reset(Rng& rng) override;
  EnvStep step(const Vector& action) override;
  bool is_terminal(const Vector& observation) const override;
  int step_cap() const override { return params_.step_cap; }

  const CartPoleState& state() const { return state_; }
  void set_state(const CartPoleState& s) { state_ = s; }
  static Vector observe(const CartPoleState& s);

 private:
  CartPoleParams params_;
  CartPoleState state_;
  int steps_ = 0;
};

/// Observation [cos angle, sin angle, angular velocity].
class PendulumEnv final : public Environment {
 public:
  explicit PendulumEnv(PendulumParams p = {}) : params_(p) {}

  std::string id() const override { return "pd"; }
  std::size_t observation_dim() const override { return 3; }
  ActionSpace action_space() const override;
  Vector reset(Rng& rng) override;
  EnvStep step(const Vector& action) override;
  bool is_terminal(const Vector&) const override { return false; }
  int step_cap() const override { return params_.step_cap; }

  const PendulumState& state() const { return state_; }
  void set_state(const PendulumState& s) { state_ = s; }
  static Vector observe(const PendulumState& s);

 private:
  PendulumParams params_;
  PendulumState state_;
  int steps_ = 0;
};

/// Start (5,10,5), destination (15,10,5); the obstacle starts near the
/// midpoint with a random heading.
class UavEnv final : public Environment {
 public:
  explicit UavEnv(UavParams p = {}) : params_(p) {}

  std::string id() const override { return "uav"; }
  std::size_t observation_dim() const override { return 9; }
  ActionSpace action_space() const override;
  Vector reset(Rng& rng) override;
  EnvStep step(const Vector& action) override;
  bool is_terminal(const Vector& observation) const override;
  int step_cap() const override { return params_.step_cap; }

  const UavWorld& world() const { return world_; }
  void set_world(const UavWorld& w) { world_ = w; }

 private:
  UavParams params_;
  UavWorld world_;
  int steps_ = 0;
};

/// Numeric parameter overrides keyed by field name (e.g. "force", "rho_o").
using EnvOverrides = std::map<std::string, double>;

/// Ids: "cp", "pd", "uav". Throws ConfigError on an unknown id or override.
std::unique_ptr<Environment> make_environment(std::string_view id, const EnvOverrides& overrides = {});
CartPoleParams cartpole_params(const EnvOverrides& overrides);
PendulumParams pendulum_params(const EnvOverrides& overrides);
UavParams uav_params(const EnvOverrides& overrides);
int cliff_step_cap(const EnvOverrides& overrides);

}  // namespace mpcrl
