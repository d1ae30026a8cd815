#pragma once

#include <vector>

namespace mpcrl {

struct BoundParams {
  double r_max = 0.0;
  double gamma = 0.0;
  int k = 0;
  double epsilon_pi = 0.0;
  double epsilon_m = 0.0;
  int horizon = 1;  // N
};

/// C = 2 r_max [ g^{k+1} e_pi / (1-g)^2 + ((g^k + 2) e_pi + N (e_m + 2 e_pi)) / (1-g) ].
/// Throws std::domain_error for gamma outside [0, 1) and std::invalid_argument
/// for other out-of-range fields.
double improvement_bound(const BoundParams& p);

/// f(N) = g^{k+1} e_pi / (1-g)^2 + (g^k + 2N + 2) e_pi / (1-g). Ignores p.horizon.
double horizon_objective(const BoundParams& p, int horizon);

struct HorizonChoice {
  int best = 1;
  std::vector<int> candidates;
  std::vector<double> objective;  // f(candidates[i])
};

/// Candidate minimizing f, ties to the smaller horizon.
HorizonChoice optimal_horizon(const BoundParams& p, const std::vector<int>& candidates);

}  // namespace mpcrl
