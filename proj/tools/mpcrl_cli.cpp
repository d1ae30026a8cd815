#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpcrl/analysis.hpp"
#include "mpcrl/approx.hpp"
#include "mpcrl/errors.hpp"
#include "mpcrl/harness.hpp"

namespace {

mpcrl::ConfigMap load_source(const std::string& source) {
  for (const auto& name : mpcrl::preset_names()) {
    if (name == source) return mpcrl::preset(name);
  }
  std::ifstream f(source);
  if (!f) throw mpcrl::ConfigError("'" + source + "' is neither a preset nor a readable config file");
  std::stringstream text;
  text << f.rdbuf();
  auto map = mpcrl::parse_config_text(text.str());
  // A run manifest reproduces its run; the seeds follow from the master seed.
  if (map.contains("format")) return mpcrl::parse_config_text(mpcrl::config_text(mpcrl::parse_manifest(text.str()).config));
  return map;
}

int run_train(const std::string& source, const std::vector<std::string>& overrides,
              const std::optional<std::uint64_t>& seed, const std::optional<int>& trials,
              const std::optional<std::string>& out, int jobs, bool step_log) {
  auto map = load_source(source);
  for (const auto& o : overrides) mpcrl::apply_override(map, o);
  if (seed) map["seed"] = std::to_string(*seed);
  if (trials) map["trials"] = std::to_string(*trials);
  if (out) map["out"] = *out;
  const auto cfg = mpcrl::resolve_config(map);

  std::cerr << "training " << cfg.agent << " on " << cfg.env << ": " << cfg.trials << " trial(s) x " << cfg.episodes
            << " episodes\n";
  mpcrl::HookFactory hooks;
  std::vector<std::shared_ptr<std::ofstream>> logs;
  if (step_log) {
    std::filesystem::create_directories(cfg.out);
    for (int i = 0; i < cfg.trials; ++i) {
      const auto path = std::filesystem::path(cfg.out) / ("trial" + std::to_string(i) + ".steps.csv");
      auto f = std::make_shared<std::ofstream>(path);
      if (!*f) throw std::runtime_error("cannot open " + path.string() + " for writing");
      *f << "episode,step,return,loss_q,loss_model_state,loss_model_reward,gate_open\n";
      logs.push_back(f);
    }
    hooks = [&logs](int trial) {
      auto f = logs[static_cast<std::size_t>(trial)];
      auto ret = std::make_shared<double>(0.0);
      mpcrl::TrialHooks h;
      h.on_step = [f, ret](int episode, int step, const mpcrl::StepReport& r, const mpcrl::DeepAgent&) {
        if (step == 1) *ret = 0.0;
        *ret += r.transition.reward;
        *f << (episode + 1) << ',' << step << ',' << mpcrl::format_double(*ret) << ',';
        if (r.trained) *f << mpcrl::format_double(r.critic_loss);
        *f << ',';
        if (r.model_loss) *f << mpcrl::format_double(r.model_loss->state);
        *f << ',';
        if (r.model_loss) *f << mpcrl::format_double(r.model_loss->reward);
        *f << ',' << (r.gate_open ? 1 : 0) << '\n';
      };
      return h;
    };
  }
  const auto curve = mpcrl::run_experiment(
      cfg, jobs,
      [](int trial, const mpcrl::TrialLog& log) {
        std::cerr << "  trial " << trial << " (seed " << log.seed << ") final return "
                  << mpcrl::format_double(log.episodes.back().ret) << '\n';
      },
      hooks);
  mpcrl::emit_results(curve, cfg.out);
  std::cout << "wrote " << cfg.out << "/{trials.csv,aggregate.csv,manifest.txt}\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& env, int episodes, std::uint64_t seed,
             const std::vector<std::string>& overrides) {
  mpcrl::ConfigMap map;
  for (const auto& o : overrides) mpcrl::apply_override(map, o);
  mpcrl::EnvOverrides env_overrides;
  for (const auto& [k, v] : map) env_overrides[k] = std::stod(v);
  const auto ev = mpcrl::evaluate_checkpoint(checkpoint, env, episodes, seed, env_overrides);
  std::cout << "checkpoint " << ev.kind << ", " << ev.returns.size() << " episode(s) on " << env << '\n';
  for (std::size_t i = 0; i < ev.returns.size(); ++i) {
    std::cout << "  episode " << (i + 1) << ": " << mpcrl::format_double(ev.returns[i]) << '\n';
  }
  std::cout << "mean return " << mpcrl::format_double(ev.mean) << '\n';
  return 0;
}

int run_bound(const mpcrl::BoundParams& base, int n_max) {
  if (n_max < 1) throw std::invalid_argument("--n-max must be at least 1");
  std::vector<int> candidates;
  for (int n = 1; n <= n_max; ++n) candidates.push_back(n);
  const auto choice = mpcrl::optimal_horizon(base, candidates);
  std::cout << std::setw(4) << "N" << "  " << std::setw(22) << "C" << "  " << std::setw(22) << "f(N)" << '\n';
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto p = base;
    p.horizon = candidates[i];
    std::cout << std::setw(4) << candidates[i] << "  " << std::setw(22)
              << mpcrl::format_double(mpcrl::improvement_bound(p)) << "  " << std::setw(22)
              << mpcrl::format_double(choice.objective[i]) << '\n';
  }
  std::cout << "minimizing N over 1.." << n_max << ": " << choice.best << '\n';
  return 0;
}

int run_presets() {
  for (const auto& name : mpcrl::preset_names()) {
    std::cout << "[" << name << "]\n" << mpcrl::config_text(mpcrl::resolve_config(mpcrl::preset(name))) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPC-based value estimation experiments"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Run seeded training trials and write results");
  std::string source;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<std::string> out;
  int jobs = 1;
  bool step_log = false;
  train->add_option("source", source, "Preset name or config file")->required();
  train->add_option("--override", overrides, "key=value applied after the preset or file");
  train->add_option("--seed", seed, "Master seed");
  train->add_option("--trials", trials, "Number of trials");
  train->add_option("--out", out, "Output directory");
  train->add_option("--jobs", jobs, "Trials run concurrently")->check(CLI::PositiveNumber);
  train->add_flag("--step-log", step_log, "Also write per-step records (deep agents) to trial<i>.steps.csv");

  auto* eval = app.add_subcommand("eval", "Greedy rollouts of a saved checkpoint");
  std::string checkpoint, env;
  int episodes = 10;
  std::uint64_t eval_seed = 0;
  std::vector<std::string> env_overrides;
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("env", env, "Environment id (cw, cp, pd, uav)")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "Seed for initial states");
  eval->add_option("--override", env_overrides, "Environment parameter name=value");

  auto* bound = app.add_subcommand("bound", "Improvement bound C and the horizon objective table");
  mpcrl::BoundParams params;
  int n_max = 5;
  bound->add_option("--rmax", params.r_max, "Max per-step reward magnitude")->required();
  bound->add_option("--gamma", params.gamma, "Discount factor in [0, 1)")->required();
  bound->add_option("--k", params.k, "Rollout start index")->required();
  bound->add_option("--eps-pi", params.epsilon_pi, "Distribution shift")->required();
  bound->add_option("--eps-m", params.epsilon_m, "Model generalization error")->required();
  bound->add_option("--n-max", n_max, "Largest horizon in the table")->required();

  app.add_subcommand("presets", "List the built-in configurations");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(source, overrides, seed, trials, out, jobs, step_log);
    if (*eval) return run_eval(checkpoint, env, episodes, eval_seed, env_overrides);
    if (*bound) return run_bound(params, n_max);
    return run_presets();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
