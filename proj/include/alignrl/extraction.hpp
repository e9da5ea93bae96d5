#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alignrl/critic.hpp"
#include "alignrl/dataset.hpp"
#include "alignrl/multipliers.hpp"

namespace alignrl {

/// Weight families for turning critic values into a policy reweighting of the
/// behavior distribution.
enum class Method { awr, align_soft, align_hard, idql_expectile, mixed };

std::string to_string(Method method);
/// Accepts the canonical names plus the CLI spellings "align-soft",
/// "align-hard", and "idql".
Method method_from_string(const std::string& name);

/// Sign convention of the soft-weight exponent. negative downweights actions
/// whose value deviates from V(s) in either direction; positive upweights
/// them. Both are useful for comparisons, negative is the default.
enum class ExponentSign { negative, positive };

std::string to_string(ExponentSign sign);
/// Accepts "negative"/"neg" and "positive"/"pos".
ExponentSign exponent_sign_from_string(const std::string& name);

struct WeightSpec {
  Method method = Method::align_hard;
  Regularizer regularizer = Regularizer::log();
  double eta = 3.0;        // soft-weight temperature
  double awr_alpha = 3.0;  // exponential advantage temperature
  double kappa = 0.1;      // mixed-method AWR admixture
  double tau = 0.7;        // expectile level of the idql weight
  double weight_floor = 0.01;
  double weight_cap = 100.0;
  ExponentSign exponent_sign = ExponentSign::negative;
  double hard_tol = 1e-10;  // per-state multiplier solve tolerance

  /// Rejects non-positive temperatures, kappa < 0, tau outside (0,1),
  /// floor < 0, cap <= 0, and floor >= cap.
  void validate() const;
  nlohmann::json to_json() const;
  static WeightSpec from_json(const nlohmann::json& j);
};

/// A fully materialized extraction result. probs rows are distributions
/// supported only on dataset-supported actions; states the dataset never
/// visited keep their behavior row (uniform) and carry zero weights.
struct ExtractedPolicy {
  TabularPolicy probs;
  QTable per_state_weights;  // raw w(s,a), 0 on unsupported actions
  WeightSpec method_provenance;
  std::vector<int> fallback_states;  // hard-method states that fell back to soft
  MultiplierTable multipliers;       // per-state solves; empty for weight-only methods

  nlohmann::json to_json() const;
  static ExtractedPolicy from_json(const nlohmann::json& j);
};

/// min(exp(awr_alpha * (q - v)), cap). The exponent is clamped at 700 so the
/// intermediate never overflows to infinity before the cap applies.
double weight_awr(double q, double v, double awr_alpha, double cap);

/// max(exp(sigma * eta * (q - v)^2), floor) with sigma = -1 for
/// ExponentSign::negative and +1 for positive; same overflow clamp as above.
double weight_align_soft(double q, double v, double eta, ExponentSign sign,
                         double floor_value);

/// tau if q >= v else 1 - tau.
double weight_idql_expectile(double q, double v, double tau);

/// w_align + kappa * w_awr.
double mix_weights(double w_align, double w_awr, double kappa);

/// Hard-constraint weight row w(a) = max(g(-alpha - beta*q(a)), 0) for solved
/// multipliers (alpha, beta).
std::vector<double> weight_align_hard(std::span<const double> q_row,
                                      const Regularizer& reg, double alpha,
                                      double beta);

/// Compute per-state weights over supported actions by spec.method, multiply
/// into the (support-renormalized) behavior row, and normalize. align_hard
/// states whose multiplier solve does not converge (infeasible target or
/// iteration cap) fall back to the soft weight and are recorded in
/// fallback_states; unvisited states carry NaN multipliers with status
/// infeasible. A state whose weighted row sums to zero raises
/// DegenerateStateError naming the state. behavior and values must cover the
/// same state/action space.
ExtractedPolicy extract_policy_full(const BehaviorModel& behavior,
                                    const ValueTables& values,
                                    const WeightSpec& spec);

/// Sampled extraction: draw n_samples actions i.i.d. from behavior_row,
/// score each drawn action with weight_fn, normalize over the drawn batch,
/// and return the drawn action with the largest normalized weight; ties break
/// toward the lowest action id.
int extract_action_sampled(std::span<const double> behavior_row,
                           const std::function<double(int)>& weight_fn,
                           int n_samples, std::uint64_t seed);

}  // namespace alignrl
