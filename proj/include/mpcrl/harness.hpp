#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpcrl/agents.hpp"
#include "mpcrl/envs.hpp"
#include "mpcrl/tabular.hpp"

namespace mpcrl {

/// Raw `key = value` entries, in key order.
using ConfigMap = std::map<std::string, std::string>;

enum class AgentFamily { Tabular, Deep };

/// Fully resolved experiment description. Fields that do not apply to the
/// chosen agent hold their defaults and are written as "n/a".
struct ExperimentConfig {
  std::string env = "cw";
  std::string agent = "dyna-mpc";
  int episodes = 300;
  int trials = 4;
  std::uint64_t seed = 0;
  std::string out = "runs";
  TabularAgentConfig tabular;
  AgentConfig deep;
  EnvOverrides env_overrides;  // "env.<name>" keys

  AgentFamily family() const;
  bool operator==(const ExperimentConfig&) const = default;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ConfigMap preset(const std::string& name);

/// Parses `key = value` lines; blank lines and '#' comments are skipped.
ConfigMap parse_config_text(std::string_view text);
/// `key=value`, as given to --override.
void apply_override(ConfigMap& map, std::string_view assignment);

/// Validates keys, values and agent/environment compatibility. Known keys
/// that do not apply to the agent are ignored.
ExperimentConfig resolve_config(const ConfigMap& map);
/// Canonical text; resolve_config(parse_config_text(config_text(c))) == c.
std::string config_text(const ExperimentConfig& cfg);

/// splitmix-style derivation from the master seed and trial index.
std::vector<std::uint64_t> trial_seeds(std::uint64_t master, int trials);

struct EpisodeRecord {
  double ret = 0.0;
  std::optional<double> loss_q;
  std::optional<double> loss_model_state;
  std::optional<double> loss_model_reward;
  std::optional<double> gate_open_fraction;

  bool operator==(const EpisodeRecord&) const = default;
};

struct TrialLog {
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::string checkpoint;  // serialized final policy or Q-table
};

struct CurveStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
};

struct LearningCurve {
  ExperimentConfig config;
  std::vector<TrialLog> trials;
  CurveStats stats;

  std::vector<std::vector<double>> returns() const;
};

/// Throws std::invalid_argument on ragged or empty input.
CurveStats aggregate_trials(const std::vector<std::vector<double>>& curves);

/// Optional observers of a deep-agent trial. Tabular trials ignore them.
struct TrialHooks {
  /// After every real step; `step` counts from 1 within the episode.
  std::function<void(int episode, int step, const StepReport&, const DeepAgent&)> on_step;
  /// After every episode; returning true ends the trial there.
  std::function<bool(const std::vector<EpisodeRecord>&)> stop;
};

/// One trial with the given seed.
TrialLog run_trial(const ExperimentConfig& cfg, std::uint64_t seed, const TrialHooks& hooks = {});

using TrialCallback = std::function<void(int trial, const TrialLog&)>;
using HookFactory = std::function<TrialHooks(int trial)>;

/// Runs every trial; `jobs` > 1 runs trials on that many threads. Results do
/// not depend on `jobs`.
LearningCurve run_experiment(const ExperimentConfig& cfg, int jobs = 1, const TrialCallback& on_trial = {},
                             const HookFactory& hooks = {});

/// Writes trials.csv, aggregate.csv, manifest.txt and one checkpoint per trial
/// into `dir` (created if missing). Throws std::runtime_error with the path on
/// I/O failure.
void emit_results(const LearningCurve& curve, const std::filesystem::path& dir);

void write_trials_csv(std::ostream& out, const LearningCurve& curve);
void write_aggregate_csv(std::ostream& out, const CurveStats& stats);

struct Manifest {
  ExperimentConfig config;
  std::vector<std::uint64_t> seeds;

  bool operator==(const Manifest&) const = default;
};

std::string manifest_text(const Manifest& m);
Manifest parse_manifest(std::string_view text);

/// Tabular checkpoint, "mpcrl-qtable v1".
void write_qtable(std::ostream& out, const QTable& q);
QTable read_qtable(std::istream& in);

struct CheckpointEvaluation {
  std::string kind;  // "qtable" or "policy"
  std::vector<double> returns;
  double mean = 0.0;
};

/// Loads a checkpoint file and runs greedy episodes on `env`.
CheckpointEvaluation evaluate_checkpoint(const std::filesystem::path& path, const std::string& env, int episodes,
                                         std::uint64_t seed, const EnvOverrides& overrides = {});

}  // namespace mpcrl
