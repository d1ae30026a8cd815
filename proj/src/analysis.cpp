#include "mpcrl/analysis.hpp"

#include <cmath>
#include <stdexcept>

namespace mpcrl {

namespace {

void check(const BoundParams& p) {
  if (!(p.gamma >= 0.0 && p.gamma < 1.0)) throw std::domain_error("gamma must lie in [0, 1)");
  if (!(p.r_max >= 0.0)) throw std::invalid_argument("r_max must be non-negative");
  if (p.k < 0) throw std::invalid_argument("k must be non-negative");
  if (!(p.epsilon_pi >= 0.0) || !(p.epsilon_m >= 0.0)) throw std::invalid_argument("error terms must be non-negative");
}

}  // namespace

double improvement_bound(const BoundParams& p) {
  check(p);
  if (p.horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const double g = p.gamma;
  const double gk = std::pow(g, p.k);
  const double shift = gk * g * p.epsilon_pi / ((1.0 - g) * (1.0 - g));
  const double rest = ((gk + 2.0) * p.epsilon_pi + p.horizon * (p.epsilon_m + 2.0 * p.epsilon_pi)) / (1.0 - g);
  return 2.0 * p.r_max * (shift + rest);
}

double horizon_objective(const BoundParams& p, int horizon) {
  check(p);
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const double g = p.gamma;
  const double gk = std::pow(g, p.k);
  return gk * g * p.epsilon_pi / ((1.0 - g) * (1.0 - g)) + (gk + 2.0 * horizon + 2.0) * p.epsilon_pi / (1.0 - g);
}

HorizonChoice optimal_horizon(const BoundParams& p, const std::vector<int>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("no candidate horizons");
  HorizonChoice out;
  out.candidates = candidates;
  double best_value = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double f = horizon_objective(p, candidates[i]);
    out.objective.push_back(f);
    if (i == 0 || f < best_value || (f == best_value && candidates[i] < out.best)) {
      best_value = f;
      out.best = candidates[i];
    }
  }
  return out;
}

}  // namespace mpcrl
