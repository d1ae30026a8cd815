#include "mpcrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mpcrl/approx.hpp"
#include "mpcrl/errors.hpp"
#include "mpcrl/random.hpp"

namespace mpcrl {

namespace {

constexpr std::string_view kNotApplicable = "n/a";
constexpr std::string_view kManifestFormat = "mpcrl-manifest v1";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end || !std::isfinite(x)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return x;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int x{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::string_view rest = v;
  while (true) {
    const auto comma = rest.find(',');
    const std::string part = trim(rest.substr(0, comma));
    const auto n = parse_int<std::size_t>(key, part);
    if (n == 0) throw ConfigError("key '" + key + "': layer widths must be positive");
    out.push_back(n);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::string sizes_text(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string model_text(ModelKind k) {
  switch (k) {
    case ModelKind::None: return "none";
    case ModelKind::Separate: return "separate";
    case ModelKind::Combined: return "combined";
  }
  return "none";
}

struct AgentTraits {
  std::string_view id;
  AgentFamily family;
  bool horizon;
  bool model;
  bool continuous;
  TabularAgentKind tabular_kind;
};

constexpr AgentTraits kAgents[] = {
    {"q", AgentFamily::Tabular, false, false, false, TabularAgentKind::QLearning},
    {"ntd", AgentFamily::Tabular, true, false, false, TabularAgentKind::NStepTd},
    {"dyna-q", AgentFamily::Tabular, false, false, false, TabularAgentKind::DynaQ},
    {"dyna-mpc", AgentFamily::Tabular, true, false, false, TabularAgentKind::DynaMpc},
    {"dqn", AgentFamily::Deep, false, false, false, {}},
    {"dqn-mpc", AgentFamily::Deep, true, true, false, {}},
    {"ddpg", AgentFamily::Deep, false, false, true, {}},
    {"ddpg-mpc", AgentFamily::Deep, true, true, true, {}},
};

const AgentTraits& traits(const std::string& agent) {
  for (const auto& t : kAgents) {
    if (t.id == agent) return t;
  }
  throw ConfigError("unknown agent '" + agent + "' (q, ntd, dyna-q, dyna-mpc, dqn, dqn-mpc, ddpg, ddpg-mpc)");
}

// Keys in canonical order. `applies` decides whether a key is meaningful for
// an agent; inapplicable keys are written as n/a.
struct KeySpec {
  std::string_view key;
  bool (*applies)(const AgentTraits&);
  void (*read)(ExperimentConfig&, const std::string& key, const std::string& value);
  std::string (*write)(const ExperimentConfig&);
};

bool always(const AgentTraits&) { return true; }
bool tabular_only(const AgentTraits& t) { return t.family == AgentFamily::Tabular; }
bool deep_only(const AgentTraits& t) { return t.family == AgentFamily::Deep; }
bool discrete_only(const AgentTraits& t) { return !t.continuous; }
bool continuous_only(const AgentTraits& t) { return t.continuous; }
bool with_horizon(const AgentTraits& t) { return t.horizon; }
bool with_model(const AgentTraits& t) { return t.model; }
bool dyna_q_only(const AgentTraits& t) { return t.id == "dyna-q"; }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"episodes", always,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.episodes = parse_int<int>(k, v); },
       [](const ExperimentConfig& c) { return std::to_string(c.episodes); }},
      {"trials", always,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trials = parse_int<int>(k, v); },
       [](const ExperimentConfig& c) { return std::to_string(c.trials); }},
      {"seed", always,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_int<std::uint64_t>(k, v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"out", always, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; },
       [](const ExperimentConfig& c) { return c.out; }},
      {"gamma", always,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const double g = parse_double(k, v);
         (c.family() == AgentFamily::Tabular ? c.tabular.gamma : c.deep.gamma) = g;
       },
       [](const ExperimentConfig& c) {
         return format_double(c.family() == AgentFamily::Tabular ? c.tabular.gamma : c.deep.gamma);
       }},
      {"epsilon", discrete_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const double e = parse_double(k, v);
         (c.family() == AgentFamily::Tabular ? c.tabular.epsilon : c.deep.epsilon) = e;
       },
       [](const ExperimentConfig& c) {
         return format_double(c.family() == AgentFamily::Tabular ? c.tabular.epsilon : c.deep.epsilon);
       }},
      {"horizon", with_horizon,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const int n = parse_int<int>(k, v);
         (c.family() == AgentFamily::Tabular ? c.tabular.horizon : c.deep.horizon) = n;
       },
       [](const ExperimentConfig& c) {
         return std::to_string(c.family() == AgentFamily::Tabular ? c.tabular.horizon : c.deep.horizon);
       }},
      {"alpha", tabular_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.tabular.learning_rate = parse_double(k, v);
       },
       [](const ExperimentConfig& c) { return format_double(c.tabular.learning_rate); }},
      {"planning_steps", dyna_q_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.tabular.planning_steps = parse_int<int>(k, v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.tabular.planning_steps); }},
      {"batch_size", deep_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.deep.batch_size = parse_int<std::size_t>(k, v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.deep.batch_size); }},
      {"buffer", deep_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.deep.buffer_capacity = parse_int<std::size_t>(k, v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.deep.buffer_capacity); }},
      {"critic_lr", deep_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.critic_lr = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.critic_lr); }},
      {"actor_lr", continuous_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.actor_lr = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.actor_lr); }},
      {"noise_sigma", continuous_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.deep.noise_sigma = parse_double(k, v);
       },
       [](const ExperimentConfig& c) { return format_double(c.deep.noise_sigma); }},
      {"zeta", deep_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.zeta = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.zeta); }},
      {"hidden", deep_only,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.hidden = parse_sizes(k, v); },
       [](const ExperimentConfig& c) { return sizes_text(c.deep.hidden); }},
      {"model", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "separate") {
           c.deep.model = ModelKind::Separate;
         } else if (v == "combined") {
           c.deep.model = ModelKind::Combined;
         } else {
           throw ConfigError("key '" + k + "': expected separate or combined, got '" + v + "'");
         }
       },
       [](const ExperimentConfig& c) { return model_text(c.deep.model); }},
      {"model_lr", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.model_lr = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.model_lr); }},
      {"model_hidden", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.deep.model_hidden = parse_sizes(k, v);
       },
       [](const ExperimentConfig& c) { return sizes_text(c.deep.model_hidden); }},
      {"lambda", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.lambda = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.lambda); }},
      {"epsilon_m", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.deep.epsilon_m = parse_double(k, v); },
       [](const ExperimentConfig& c) { return format_double(c.deep.epsilon_m); }},
      {"gate_smoothing", with_model,
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.deep.gate_smoothing = parse_double(k, v);
       },
       [](const ExperimentConfig& c) { return format_double(c.deep.gate_smoothing); }},
  };
  return specs;
}

bool env_supports(const std::string& env, const AgentTraits& t) {
  if (t.family == AgentFamily::Tabular) return env == "cw";
  if (t.continuous) return env == "pd" || env == "uav";
  return env == "cp";
}

void validate(const ExperimentConfig& c) {
  const auto& t = traits(c.agent);
  if (c.env != "cw" && c.env != "cp" && c.env != "pd" && c.env != "uav") {
    throw ConfigError("unknown environment '" + c.env + "' (cw, cp, pd, uav)");
  }
  if (!env_supports(c.env, t)) throw ConfigError("agent '" + c.agent + "' cannot run on environment '" + c.env + "'");
  if (c.trials < 1) throw ConfigError("trials must be at least 1");
  if (c.episodes < 1) throw ConfigError("episodes must be at least 1");
  if (c.out.empty()) throw ConfigError("out must not be empty");
  if (c.env == "cw") {
    (void)cliff_step_cap(c.env_overrides);
  } else {
    (void)make_environment(c.env, c.env_overrides);
  }
  if (t.family == AgentFamily::Tabular) {
    const auto& a = c.tabular;
    if (!(a.gamma >= 0.0 && a.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(a.learning_rate >= 0.0 && a.learning_rate <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(a.epsilon >= 0.0 && a.epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
    if (a.horizon < 1) throw ConfigError("horizon must be at least 1");
    if (a.planning_steps < 0) throw ConfigError("planning_steps must be non-negative");
    return;
  }
  const auto& a = c.deep;
  if (!(a.gamma >= 0.0 && a.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(a.epsilon >= 0.0 && a.epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (a.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (a.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (a.buffer_capacity < a.batch_size) throw ConfigError("buffer must hold at least one batch");
  if (!(a.critic_lr > 0.0) || !(a.actor_lr > 0.0) || !(a.model_lr > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(a.zeta > 0.0 && a.zeta <= 1.0)) throw ConfigError("zeta must lie in (0, 1]");
  if (!(a.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(a.lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(a.epsilon_m >= 0.0)) throw ConfigError("epsilon_m must be non-negative");
  if (!(a.gate_smoothing >= 0.0 && a.gate_smoothing < 1.0)) throw ConfigError("gate_smoothing must lie in [0, 1)");
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  f.close();
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

TrialLog run_tabular_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  TabularAgentConfig a = cfg.tabular;
  a.kind = traits(cfg.agent).tabular_kind;
  Rng rng(seed);
  QTable final_table(48, 4, a.learning_rate, a.epsilon);
  const auto curve = train_cliff(a, cfg.episodes, cliff_step_cap(cfg.env_overrides), rng, &final_table);
  TrialLog log;
  log.seed = seed;
  for (const auto& e : curve) {
    EpisodeRecord r;
    r.ret = e.train_return;
    r.loss_q = e.mean_sq_td_error;
    log.episodes.push_back(r);
  }
  std::ostringstream ck;
  write_qtable(ck, final_table);
  log.checkpoint = ck.str();
  return log;
}

TrialLog run_deep_trial(const ExperimentConfig& cfg, std::uint64_t seed, const TrialHooks& hooks) {
  const auto& t = traits(cfg.agent);
  auto env = make_environment(cfg.env, cfg.env_overrides);
  AgentConfig a = cfg.deep;
  if (!t.model) a.model = ModelKind::None;
  DeepAgent agent(t.continuous ? DeepAgentKind::Ddpg : DeepAgentKind::Dqn, a, *env, seed);
  Rng env_rng(derive_seed(seed, 3));

  TrialLog log;
  log.seed = seed;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    agent.begin_episode(*env, env_rng);
    EpisodeRecord rec;
    std::vector<double> q_losses, state_losses, reward_losses;
    std::size_t gate_open = 0;
    for (int n = 1;; ++n) {
      const auto step = agent.train_step(*env);
      if (hooks.on_step) hooks.on_step(ep, n, step, agent);
      rec.ret += step.transition.reward;
      if (step.trained) {
        q_losses.push_back(step.critic_loss);
        if (step.model_loss) {
          state_losses.push_back(step.model_loss->state);
          reward_losses.push_back(step.model_loss->reward);
        }
        if (step.gate_open) ++gate_open;
      }
      if (step.episode_end) break;
    }
    if (!q_losses.empty()) rec.loss_q = mean_of(q_losses);
    if (!state_losses.empty()) {
      rec.loss_model_state = mean_of(state_losses);
      rec.loss_model_reward = mean_of(reward_losses);
    }
    if (t.model && !q_losses.empty()) {
      rec.gate_open_fraction = static_cast<double>(gate_open) / static_cast<double>(q_losses.size());
    }
    log.episodes.push_back(rec);
    if (hooks.stop && hooks.stop(log.episodes)) break;
  }
  std::ostringstream ck;
  write_policy(ck, agent, cfg.env);
  log.checkpoint = ck.str();
  return log;
}

}  // namespace

AgentFamily ExperimentConfig::family() const { return traits(agent).family; }

std::vector<std::string> preset_names() { return {"cw", "cp", "pd", "uav"}; }

ConfigMap preset(const std::string& name) {
  if (name == "cw") {
    return {{"env", "cw"},         {"agent", "dyna-mpc"}, {"episodes", "300"}, {"trials", "4"},
            {"seed", "0"},         {"out", "runs/cw"},    {"gamma", "0.9"},    {"epsilon", "0.01"},
            {"alpha", "0.1"},      {"horizon", "2"}};
  }
  if (name == "cp") {
    return {{"env", "cp"},          {"agent", "dqn-mpc"},  {"episodes", "300"},   {"trials", "4"},
            {"seed", "0"},          {"out", "runs/cp"},    {"gamma", "0.98"},     {"epsilon", "0.01"},
            {"buffer", "10000"},    {"batch_size", "64"},  {"critic_lr", "0.002"}, {"model_lr", "0.002"},
            {"model", "combined"},  {"horizon", "2"},      {"epsilon_m", "0.01"}, {"zeta", "0.01"},
            {"hidden", "64,64"},    {"model_hidden", "64,64"}};
  }
  if (name == "pd") {
    return {{"env", "pd"},            {"agent", "ddpg-mpc"}, {"episodes", "200"},     {"trials", "4"},
            {"seed", "0"},            {"out", "runs/pd"},    {"gamma", "0.98"},       {"buffer", "10000"},
            {"batch_size", "64"},     {"critic_lr", "0.003"}, {"actor_lr", "0.0003"}, {"model_lr", "0.003"},
            {"model", "combined"},    {"horizon", "2"},      {"epsilon_m", "0.01"},   {"zeta", "0.01"},
            {"noise_sigma", "0.1"},   {"hidden", "64,64"},   {"model_hidden", "64,64"}};
  }
  if (name == "uav") {
    return {{"env", "uav"},           {"agent", "ddpg-mpc"},  {"episodes", "300"},    {"trials", "4"},
            {"seed", "0"},            {"out", "runs/uav"},    {"gamma", "0.99"},      {"buffer", "1000000"},
            {"batch_size", "64"},     {"critic_lr", "0.001"}, {"actor_lr", "0.001"},  {"model_lr", "0.001"},
            {"model", "combined"},    {"horizon", "2"},       {"epsilon_m", "0.01"},  {"zeta", "0.01"},
            {"noise_sigma", "0.1"},   {"hidden", "128,128"},  {"model_hidden", "128,128"}};
  }
  throw ConfigError("unknown preset '" + name + "' (cw, cp, pd, uav)");
}

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap map;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (map.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    map.emplace(std::move(key), std::move(value));
  }
  return map;
}

void apply_override(ConfigMap& map, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + std::string(assignment) + "' has an empty key");
  map[key] = trim(assignment.substr(eq + 1));
}

ExperimentConfig resolve_config(const ConfigMap& map) {
  ExperimentConfig c;
  const auto env_it = map.find("env");
  const auto agent_it = map.find("agent");
  if (env_it == map.end()) throw ConfigError("missing key 'env'");
  if (agent_it == map.end()) throw ConfigError("missing key 'agent'");
  c.env = env_it->second;
  c.agent = agent_it->second;
  const auto& t = traits(c.agent);
  if (t.family == AgentFamily::Tabular) {
    c.tabular.kind = t.tabular_kind;
  }
  if (t.model) c.deep.model = ModelKind::Separate;

  for (const auto& [key, value] : map) {
    if (key == "env" || key == "agent") continue;
    if (key.rfind("env.", 0) == 0) {
      c.env_overrides[key.substr(4)] = parse_double(key, value);
      continue;
    }
    const auto& specs = key_specs();
    const auto spec = std::find_if(specs.begin(), specs.end(), [&](const KeySpec& s) { return s.key == key; });
    if (spec == specs.end()) throw ConfigError("unknown key '" + key + "'");
    // Keys the agent does not use are accepted and dropped, so that switching
    // the agent of a preset with --override keeps working.
    if (value == kNotApplicable || !spec->applies(t)) continue;
    spec->read(c, key, value);
  }
  validate(c);
  return c;
}

std::string config_text(const ExperimentConfig& cfg) {
  const auto& t = traits(cfg.agent);
  std::string out;
  out += "env = " + cfg.env + "\n";
  out += "agent = " + cfg.agent + "\n";
  for (const auto& spec : key_specs()) {
    out += std::string(spec.key) + " = " + (spec.applies(t) ? spec.write(cfg) : std::string(kNotApplicable)) + "\n";
  }
  for (const auto& [name, value] : cfg.env_overrides) out += "env." + name + " = " + format_double(value) + "\n";
  return out;
}

std::vector<std::uint64_t> trial_seeds(std::uint64_t master, int trials) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < trials; ++i) seeds.push_back(derive_seed(master, static_cast<std::uint64_t>(i)));
  return seeds;
}

std::vector<std::vector<double>> LearningCurve::returns() const {
  std::vector<std::vector<double>> out;
  for (const auto& t : trials) {
    std::vector<double> r;
    for (const auto& e : t.episodes) r.push_back(e.ret);
    out.push_back(std::move(r));
  }
  return out;
}

CurveStats aggregate_trials(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw std::invalid_argument("no trials to aggregate");
  const std::size_t n = curves.front().size();
  for (const auto& c : curves) {
    if (c.size() != n) throw std::invalid_argument("trials have different episode counts");
  }
  CurveStats s;
  s.mean.assign(n, 0.0);
  s.stddev.assign(n, 0.0);
  const double k = static_cast<double>(curves.size());
  for (std::size_t e = 0; e < n; ++e) {
    double sum = 0.0;
    for (const auto& c : curves) sum += c[e];
    const double m = sum / k;
    double sq = 0.0;
    for (const auto& c : curves) sq += (c[e] - m) * (c[e] - m);
    s.mean[e] = m;
    s.stddev[e] = std::sqrt(sq / k);
  }
  return s;
}

TrialLog run_trial(const ExperimentConfig& cfg, std::uint64_t seed, const TrialHooks& hooks) {
  validate(cfg);
  return cfg.family() == AgentFamily::Tabular ? run_tabular_trial(cfg, seed) : run_deep_trial(cfg, seed, hooks);
}

LearningCurve run_experiment(const ExperimentConfig& cfg, int jobs, const TrialCallback& on_trial,
                             const HookFactory& hooks) {
  validate(cfg);
  const auto seeds = trial_seeds(cfg.seed, cfg.trials);
  LearningCurve curve;
  curve.config = cfg;
  curve.trials.resize(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        curve.trials[i] = run_trial(cfg, seeds[i], hooks ? hooks(static_cast<int>(i)) : TrialHooks{});
        if (on_trial) {
          std::lock_guard lock(callback_mutex);
          on_trial(static_cast<int>(i), curve.trials[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp(jobs, 1, cfg.trials));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  curve.stats = aggregate_trials(curve.returns());
  return curve;
}

void write_trials_csv(std::ostream& out, const LearningCurve& curve) {
  out << "episode,trial,return,loss_q,loss_model_state,loss_model_reward,gate_open_fraction\n";
  for (std::size_t t = 0; t < curve.trials.size(); ++t) {
    const auto& eps = curve.trials[t].episodes;
    for (std::size_t e = 0; e < eps.size(); ++e) {
      const auto& r = eps[e];
      out << (e + 1) << ',' << t << ',' << format_double(r.ret) << ',' << optional_text(r.loss_q) << ','
          << optional_text(r.loss_model_state) << ',' << optional_text(r.loss_model_reward) << ','
          << optional_text(r.gate_open_fraction) << '\n';
    }
  }
}

void write_aggregate_csv(std::ostream& out, const CurveStats& stats) {
  out << "episode,mean_return,std_return\n";
  for (std::size_t e = 0; e < stats.mean.size(); ++e) {
    out << (e + 1) << ',' << format_double(stats.mean[e]) << ',' << format_double(stats.stddev[e]) << '\n';
  }
}

std::string manifest_text(const Manifest& m) {
  std::string out = "# mpcrl run manifest\nformat = " + std::string(kManifestFormat) + "\n";
  out += config_text(m.config);
  for (std::size_t i = 0; i < m.seeds.size(); ++i) {
    out += "trial." + std::to_string(i) + ".seed = " + std::to_string(m.seeds[i]) + "\n";
  }
  return out;
}

Manifest parse_manifest(std::string_view text) {
  ConfigMap map = parse_config_text(text);
  const auto fmt = map.find("format");
  if (fmt == map.end() || fmt->second != kManifestFormat) throw ConfigError("not an " + std::string(kManifestFormat));
  map.erase(fmt);
  std::map<int, std::uint64_t> seeds;
  for (auto it = map.begin(); it != map.end();) {
    const auto& key = it->first;
    if (key.rfind("trial.", 0) == 0 && key.size() > 11 && key.compare(key.size() - 5, 5, ".seed") == 0) {
      const int index = parse_int<int>(key, key.substr(6, key.size() - 11));
      seeds[index] = parse_int<std::uint64_t>(key, it->second);
      it = map.erase(it);
    } else {
      ++it;
    }
  }
  Manifest m;
  m.config = resolve_config(map);
  int expected = 0;
  for (const auto& [index, seed] : seeds) {
    if (index != expected++) throw ConfigError("manifest trial seeds are not numbered 0..n-1");
    m.seeds.push_back(seed);
  }
  return m;
}

void emit_results(const LearningCurve& curve, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream trials, aggregate;
  write_trials_csv(trials, curve);
  write_aggregate_csv(aggregate, curve.stats);
  write_file(dir / "trials.csv", trials.str());
  write_file(dir / "aggregate.csv", aggregate.str());

  Manifest m{curve.config, {}};
  for (const auto& t : curve.trials) m.seeds.push_back(t.seed);
  write_file(dir / "manifest.txt", manifest_text(m));

  const std::string ext = curve.config.family() == AgentFamily::Tabular ? ".qtable" : ".policy";
  for (std::size_t i = 0; i < curve.trials.size(); ++i) {
    write_file(dir / ("trial" + std::to_string(i) + ext), curve.trials[i].checkpoint);
  }
}

void write_qtable(std::ostream& out, const QTable& q) {
  out << "mpcrl-qtable v1\n";
  out << "shape " << q.states() << ' ' << q.actions() << '\n';
  out << "alpha " << format_double(q.learning_rate()) << '\n';
  out << "epsilon " << format_double(q.epsilon()) << '\n';
  for (int s = 0; s < q.states(); ++s) {
    for (int a = 0; a < q.actions(); ++a) out << (a ? " " : "") << format_double(q(s, a));
    out << '\n';
  }
}

QTable read_qtable(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mpcrl-qtable v1") throw std::runtime_error("not an mpcrl-qtable v1 file");
  std::string word;
  int states = 0, actions = 0;
  double alpha = 0.0, epsilon = 0.0;
  if (!(in >> word >> states >> actions) || word != "shape") throw std::runtime_error("qtable: expected shape");
  if (!(in >> word >> alpha) || word != "alpha") throw std::runtime_error("qtable: expected alpha");
  if (!(in >> word >> epsilon) || word != "epsilon") throw std::runtime_error("qtable: expected epsilon");
  QTable q(states, actions, alpha, epsilon);
  for (int s = 0; s < states; ++s) {
    for (int a = 0; a < actions; ++a) {
      if (!(in >> q(s, a))) throw std::runtime_error("qtable: truncated values");
    }
  }
  return q;
}

CheckpointEvaluation evaluate_checkpoint(const std::filesystem::path& path, const std::string& env, int episodes,
                                         std::uint64_t seed, const EnvOverrides& overrides) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string first;
  std::getline(f, first);
  f.seekg(0);
  if (episodes < 1) throw std::invalid_argument("episodes must be at least 1");

  CheckpointEvaluation ev;
  if (first == "mpcrl-qtable v1") {
    if (env != "cw") throw ConfigError("a Q-table checkpoint can only be evaluated on cw");
    const QTable q = read_qtable(f);
    ev.kind = "qtable";
    // Greedy cliff walking is deterministic; every episode is the same.
    ev.returns.assign(static_cast<std::size_t>(episodes), cliff_greedy_return(q, cliff_step_cap(overrides)));
  } else if (first == "mpcrl-policy v1") {
    const auto ck = read_policy(f);
    auto environment = make_environment(env, overrides);
    if (ck.critic.input_dim() != environment->observation_dim() + (ck.actor ? environment->action_space().dim() : 0)) {
      throw ConfigError("checkpoint trained on '" + ck.env + "' does not fit environment '" + env + "'");
    }
    Rng rng(seed);
    ev.kind = "policy";
    ev.returns = evaluate([&ck](const Vector& s) { return ck.act(s); }, *environment, episodes, rng).returns;
  } else {
    throw std::runtime_error("unrecognized checkpoint format in " + path.string());
  }
  ev.mean = mean_of(ev.returns);
  return ev;
}

}  // namespace mpcrl
