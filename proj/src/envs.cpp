#include "mpcrl/envs.hpp"

#include <algorithm>
#include <Eigen/Geometry>
#include <cmath>
#include <functional>
#include <string>

#include "mpcrl/errors.hpp"

namespace mpcrl {

// ---------------------------------------------------------------------------
// Cliff walking

bool is_cliff(GridState s) { return s.row == kCliffRows - 1 && s.col >= 1 && s.col <= kCliffCols - 2; }

CliffStep cliff_step(GridState s, CliffAction a) {
  GridState next = s;
  switch (a) {
    case CliffAction::Up: next.row = std::max(0, s.row - 1); break;
    case CliffAction::Down: next.row = std::min(kCliffRows - 1, s.row + 1); break;
    case CliffAction::Left: next.col = std::max(0, s.col - 1); break;
    case CliffAction::Right: next.col = std::min(kCliffCols - 1, s.col + 1); break;
  }
  if (is_cliff(next)) return {kCliffStart, -100.0, false};
  return {next, -1.0, next == kCliffGoal};
}

int CliffWalk::reset() {
  state_ = kCliffStart;
  steps_ = 0;
  return grid_index(state_);
}

CliffWalk::Step CliffWalk::step(int action) {
  if (action < 0 || action >= kCliffActions) throw std::out_of_range("cliff action out of range");
  const auto r = cliff_step(state_, static_cast<CliffAction>(action));
  state_ = r.next;
  ++steps_;
  return {grid_index(r.next), r.reward, r.done, !r.done && steps_ >= step_cap_};
}

// ---------------------------------------------------------------------------
// Cart-pole

CartPoleStep cartpole_step(const CartPoleState& s, CartPoleAction a, const CartPoleParams& p) {
  const double force = a == CartPoleAction::PushRight ? p.force : -p.force;
  const double total_mass = p.cart_mass + p.pole_mass;
  const double polemass_length = p.pole_mass * p.half_length;
  const double cos_t = std::cos(s.pole_angle);
  const double sin_t = std::sin(s.pole_angle);
  const double temp =
      (force + polemass_length * s.pole_angular_velocity * s.pole_angular_velocity * sin_t) / total_mass;
  const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                           (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  CartPoleState next;
  next.cart_position = s.cart_position + p.dt * s.cart_velocity;
  next.cart_velocity = s.cart_velocity + p.dt * x_acc;
  next.pole_angle = s.pole_angle + p.dt * s.pole_angular_velocity;
  next.pole_angular_velocity = s.pole_angular_velocity + p.dt * theta_acc;
  return {next, 1.0, !cartpole_alive(next, p)};
}

bool cartpole_alive(const CartPoleState& s, const CartPoleParams& p) {
  return std::abs(s.pole_angle) <= p.angle_limit && std::abs(s.cart_position) <= p.position_limit;
}

Vector CartPoleEnv::observe(const CartPoleState& s) {
  Vector o(4);
  o << s.cart_position, s.cart_velocity, s.pole_angle, s.pole_angular_velocity;
  return o;
}

Vector CartPoleEnv::reset(Rng& rng) {
  state_.cart_position = rng.uniform(-0.05, 0.05);
  state_.cart_velocity = rng.uniform(-0.05, 0.05);
  state_.pole_angle = rng.uniform(-0.05, 0.05);
  state_.pole_angular_velocity = rng.uniform(-0.05, 0.05);
  steps_ = 0;
  return observe(state_);
}

EnvStep CartPoleEnv::step(const Vector& action) {
  const int a = static_cast<int>(action(0));
  if (a != 0 && a != 1) throw std::out_of_range("cart-pole action must be 0 or 1");
  const auto r = cartpole_step(state_, static_cast<CartPoleAction>(a), params_);
  state_ = r.next;
  ++steps_;
  return {observe(state_), r.reward, r.done, !r.done && steps_ >= params_.step_cap};
}

bool CartPoleEnv::is_terminal(const Vector& o) const {
  return std::abs(o(2)) > params_.angle_limit || std::abs(o(0)) > params_.position_limit;
}

// ---------------------------------------------------------------------------
// Pendulum

double wrap_angle(double angle) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(angle + std::numbers::pi, two_pi);
  if (w <= 0.0) w += two_pi;
  return w - std::numbers::pi;
}

PendulumStep pendulum_step(const PendulumState& s, double torque, const PendulumParams& p) {
  const double u = std::clamp(torque, -p.max_torque, p.max_torque);
  const double th = wrap_angle(s.angle);
  const double cost = th * th + 0.1 * s.angular_velocity * s.angular_velocity + 0.001 * u * u;

  const double acc = 3.0 * p.gravity / (2.0 * p.length) * std::sin(s.angle) +
                     3.0 / (p.mass * p.length * p.length) * u;
  PendulumState next;
  next.angular_velocity = std::clamp(s.angular_velocity + acc * p.dt, -p.max_speed, p.max_speed);
  next.angle = wrap_angle(s.angle + next.angular_velocity * p.dt);
  return {next, -cost, u, false};
}

Vector PendulumEnv::observe(const PendulumState& s) {
  Vector o(3);
  o << std::cos(s.angle), std::sin(s.angle), s.angular_velocity;
  return o;
}

ActionSpace PendulumEnv::action_space() const {
  return {0, Vector::Constant(1, -params_.max_torque), Vector::Constant(1, params_.max_torque)};
}

Vector PendulumEnv::reset(Rng& rng) {
  state_.angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
  state_.angular_velocity = rng.uniform(-1.0, 1.0);
  steps_ = 0;
  return observe(state_);
}

EnvStep PendulumEnv::step(const Vector& action) {
  const auto r = pendulum_step(state_, action(0), params_);
  state_ = r.next;
  ++steps_;
  return {observe(state_), r.reward, false, steps_ >= params_.step_cap};
}

// ---------------------------------------------------------------------------
// UAV

UavObservation uav_observe(const UavWorld& w) {
  const Vec3 rel = w.p_o - w.p_u;
  const double d_ou = rel.norm();
  if (d_ou == 0.0) throw GeometryError("UAV and obstacle centers coincide; observation undefined");
  const double clearance = d_ou - (w.params.rho_o + w.params.rho_u);
  UavObservation s;
  s.segment<3>(0) = rel * (clearance / d_ou);
  s.segment<3>(3) = w.p_e - w.p_u;
  s.segment<3>(6) = w.v_o;
  return s;
}

double uav_threat_reward(double d_ou, const UavParams& p) {
  const double threat_radius = p.rho_o + p.rho_u + p.d_thr;
  if (d_ou < threat_radius) return (d_ou - threat_radius) / threat_radius - p.r_d;
  return 0.0;
}

double uav_reward(const UavWorld& w) {
  const auto& p = w.params;
  const double d_ou = w.d_ou();
  const double contact = p.rho_o + p.rho_u;
  if (d_ou < contact) return (d_ou - contact) / contact - p.r_a;
  const double d_es = w.d_es();
  const double progress = -w.d_eu() / d_es;
  const double threat = uav_threat_reward(d_ou, p);
  if (w.d_eu() < p.d_com) return progress + p.completion_bonus + p.r_c + threat;
  return progress + p.r_c + threat;
}

UavAction clip_action(const UavAction& a, const UavParams& p) {
  const double b = p.action_bound;
  return {std::clamp(a.roll, -b, b), std::clamp(a.yaw, -b, b), std::clamp(a.pitch, -b, b)};
}

Vec3 uav_heading(const UavWorld& w, const UavAction& a) {
  Vec3 forward = w.p_e - w.p_s;
  forward = forward.norm() > 0.0 ? Vec3(forward.normalized()) : Vec3::UnitX();
  Vec3 left = Vec3::UnitZ().cross(forward);
  if (left.norm() < 1e-12) left = Vec3::UnitY();
  left.normalize();
  const Vec3 up = forward.cross(left);

  const double yaw = a.yaw + w.params.roll_gain * a.roll;
  const double cp = std::cos(a.pitch);
  return cp * std::cos(yaw) * forward + cp * std::sin(yaw) * left + std::sin(a.pitch) * up;
}

UavStep uav_step(const UavWorld& w, const UavAction& action) {
  const auto& p = w.params;
  const UavAction a = clip_action(action, p);
  UavWorld next = w;
  next.p_u = w.p_u + p.speed * p.dt * uav_heading(w, a);

  next.p_o = w.p_o + p.dt * w.v_o;
  for (int i = 0; i < 3; ++i) {
    const double lo = p.rho_o;
    const double hi = p.arena(i) - p.rho_o;
    if (next.p_o(i) < lo && next.v_o(i) < 0.0) {
      next.p_o(i) = 2.0 * lo - next.p_o(i);
      next.v_o(i) = -next.v_o(i);
    } else if (next.p_o(i) > hi && next.v_o(i) > 0.0) {
      next.p_o(i) = 2.0 * hi - next.p_o(i);
      next.v_o(i) = -next.v_o(i);
    }
  }
  return {next, uav_reward(next), next.d_eu() < p.d_com};
}

ActionSpace UavEnv::action_space() const {
  return {0, Vector::Constant(3, -params_.action_bound), Vector::Constant(3, params_.action_bound)};
}

Vector UavEnv::reset(Rng& rng) {
  world_ = UavWorld{};
  world_.params = params_;
  const Vec3 centre = 0.5 * params_.arena;
  world_.p_s = Vec3(centre.x() - 5.0, centre.y(), centre.z());
  world_.p_e = Vec3(centre.x() + 5.0, centre.y(), centre.z());
  world_.p_u = world_.p_s;
  world_.p_o = Vec3(centre.x() + rng.uniform(-1.0, 1.0), centre.y() + rng.uniform(-1.5, 1.5),
                    centre.z() + rng.uniform(-1.0, 1.0));
  Vec3 dir(rng.normal(), rng.normal(), rng.normal());
  while (dir.norm() < 1e-9) dir = Vec3(rng.normal(), rng.normal(), rng.normal());
  world_.v_o = params_.obstacle_speed * dir.normalized();
  steps_ = 0;
  return uav_observe(world_);
}

EnvStep UavEnv::step(const Vector& action) {
  const auto r = uav_step(world_, {action(0), action(1), action(2)});
  world_ = r.next;
  ++steps_;
  return {uav_observe(world_), r.reward, r.done, !r.done && steps_ >= params_.step_cap};
}

bool UavEnv::is_terminal(const Vector& o) const { return o.segment<3>(3).norm() < params_.d_com; }

// ---------------------------------------------------------------------------
// Factory

namespace {

template <class Params>
using Setters = std::map<std::string, std::function<void(Params&, double)>>;

template <class Params>
Params apply_overrides(const EnvOverrides& overrides, const Setters<Params>& setters, std::string_view env) {
  Params p;
  for (const auto& [key, value] : overrides) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("unknown parameter '" + key + "' for environment '" + std::string(env) + "'");
    }
    it->second(p, value);
  }
  return p;
}

int as_cap(double v) {
  if (v < 1.0 || v != std::floor(v)) throw ConfigError("step_cap must be a positive integer");
  return static_cast<int>(v);
}

}  // namespace

CartPoleParams cartpole_params(const EnvOverrides& overrides) {
  static const Setters<CartPoleParams> setters{
      {"gravity", [](auto& p, double v) { p.gravity = v; }},
      {"cart_mass", [](auto& p, double v) { p.cart_mass = v; }},
      {"pole_mass", [](auto& p, double v) { p.pole_mass = v; }},
      {"half_length", [](auto& p, double v) { p.half_length = v; }},
      {"force", [](auto& p, double v) { p.force = v; }},
      {"dt", [](auto& p, double v) { p.dt = v; }},
      {"angle_limit", [](auto& p, double v) { p.angle_limit = v; }},
      {"position_limit", [](auto& p, double v) { p.position_limit = v; }},
      {"step_cap", [](auto& p, double v) { p.step_cap = as_cap(v); }},
  };
  return apply_overrides(overrides, setters, "cp");
}

PendulumParams pendulum_params(const EnvOverrides& overrides) {
  static const Setters<PendulumParams> setters{
      {"gravity", [](auto& p, double v) { p.gravity = v; }},
      {"mass", [](auto& p, double v) { p.mass = v; }},
      {"length", [](auto& p, double v) { p.length = v; }},
      {"dt", [](auto& p, double v) { p.dt = v; }},
      {"max_torque", [](auto& p, double v) { p.max_torque = v; }},
      {"max_speed", [](auto& p, double v) { p.max_speed = v; }},
      {"step_cap", [](auto& p, double v) { p.step_cap = as_cap(v); }},
  };
  return apply_overrides(overrides, setters, "pd");
}

UavParams uav_params(const EnvOverrides& overrides) {
  static const Setters<UavParams> setters{
      {"rho_o", [](auto& p, double v) { p.rho_o = v; }},
      {"rho_u", [](auto& p, double v) { p.rho_u = v; }},
      {"d_com", [](auto& p, double v) { p.d_com = v; }},
      {"d_thr", [](auto& p, double v) { p.d_thr = v; }},
      {"r_a", [](auto& p, double v) { p.r_a = v; }},
      {"completion_bonus", [](auto& p, double v) { p.completion_bonus = v; }},
      {"r_c", [](auto& p, double v) { p.r_c = v; }},
      {"r_d", [](auto& p, double v) { p.r_d = v; }},
      {"speed", [](auto& p, double v) { p.speed = v; }},
      {"dt", [](auto& p, double v) { p.dt = v; }},
      {"action_bound", [](auto& p, double v) { p.action_bound = v; }},
      {"roll_gain", [](auto& p, double v) { p.roll_gain = v; }},
      {"arena_x", [](auto& p, double v) { p.arena.x() = v; }},
      {"arena_y", [](auto& p, double v) { p.arena.y() = v; }},
      {"arena_z", [](auto& p, double v) { p.arena.z() = v; }},
      {"obstacle_speed", [](auto& p, double v) { p.obstacle_speed = v; }},
      {"step_cap", [](auto& p, double v) { p.step_cap = as_cap(v); }},
  };
  auto p = apply_overrides(overrides, setters, "uav");
  if (!(p.rho_o > 0 && p.rho_u > 0 && p.d_com > 0 && p.d_thr > 0)) {
    throw ConfigError("uav radii and distances must be positive");
  }
  return p;
}

int cliff_step_cap(const EnvOverrides& overrides) {
  int cap = 1000;
  for (const auto& [key, value] : overrides) {
    if (key != "step_cap") throw ConfigError("unknown parameter '" + key + "' for environment 'cw'");
    cap = as_cap(value);
  }
  return cap;
}

std::unique_ptr<Environment> make_environment(std::string_view id, const EnvOverrides& overrides) {
  if (id == "cp") return std::make_unique<CartPoleEnv>(cartpole_params(overrides));
  if (id == "pd") return std::make_unique<PendulumEnv>(pendulum_params(overrides));
  if (id == "uav") return std::make_unique<UavEnv>(uav_params(overrides));
  throw ConfigError("unknown vector environment '" + std::string(id) + "'");
}

}  // namespace mpcrl
