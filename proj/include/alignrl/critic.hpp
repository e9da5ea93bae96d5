#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "alignrl/dataset.hpp"
#include "alignrl/mdp.hpp"

namespace alignrl {

struct CriticConfig {
  double tau = 0.7;            // expectile level in (0, 1)
  double gamma = 0.99;         // discount in [0, 1)
  std::int64_t max_sweeps = 100000;
  double tol = 1e-9;           // sup-norm change per sweep at convergence
  double polyak = 0.0;         // 0 replaces Q outright; p>0 blends (1-p)*old + p*new

  void validate() const;
};

/// Converged action-value and state-value tables. Unsupported (state, action)
/// pairs hold NaN and are excluded from every consumer; for converged tables
/// each v(s) lies within [min, max] of the supported q(s, .) row.
struct ValueTables {
  QTable q;
  StateValueTable v;
  double tau = 0.5;
  double gamma = 0.99;
  std::vector<std::uint8_t> support;  // [s][a], 1 where the dataset visited the pair

  bool supported(int s, int a) const {
    return support[static_cast<std::size_t>(s) * q.n_actions + a] != 0;
  }
  bool visited(int s) const {
    for (int a = 0; a < q.n_actions; ++a)
      if (supported(s, a)) return true;
    return false;
  }

  nlohmann::json to_json() const;
  static ValueTables from_json(const nlohmann::json& j);
};

/// Asymmetric squared loss |tau - 1(u < 0)| * u^2.
double expectile_loss(double u, double tau);

/// Weighted tau-expectile of `values`, solved by the fixed point
/// v <- sum(w*m*x) / sum(w*m) with m_i = |tau - 1(x_i < v)|, iterated until
/// |dv| < tol. Weights must be non-negative with positive total.
double solve_state_expectile(std::span<const double> values,
                             std::span<const double> weights, double tau,
                             double tol);

/// Exact tabular alternation of the two-step critic until neither table moves
/// by more than config.tol in one sweep:
///   (a) q(s,a) <- mean over records at (s,a) of r + gamma*(1-done)*v(s_next)
///   (b) v(s)   <- tau-expectile of the supported q(s,.) under empirical counts
/// States never seen as a source keep v = 0 when bootstrapped. Throws
/// NumericError when max_sweeps is exhausted, ConfigError when `behavior`
/// counts disagree with the dataset.
ValueTables train_critic(const TransitionDataset& data, const BehaviorModel& behavior,
                         const CriticConfig& config);

}  // namespace alignrl
