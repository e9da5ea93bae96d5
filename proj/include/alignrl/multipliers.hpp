#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alignrl/errors.hpp"

namespace alignrl {

enum class RegKind { log_ratio, linear };

/// Behavior-ratio regularizer f and its derived quantities:
///   h(x)  = x * f(x)
///   h'(x) = d/dx h(x)
///   g     = inverse of h', so g(h'(x)) = x
/// Two members: f(x) = log(x) with g(y) = exp(y-1), and f(x) = x - 1 with
/// g(y) = (y+1)/2. Policy weights are max(g(-alpha - beta*q), 0).
class Regularizer {
 public:
  static Regularizer log() { return Regularizer(RegKind::log_ratio); }
  static Regularizer linear() { return Regularizer(RegKind::linear); }
  static Regularizer from_string(const std::string& name);

  RegKind kind() const { return kind_; }
  std::string name() const { return kind_ == RegKind::log_ratio ? "log" : "linear"; }

  double f(double x) const;
  double h(double x) const;
  double h_prime(double x) const;
  double g(double y) const;
  /// lim_{x->0+} h'(x): -inf for the log member, -1 for the linear one.
  double h_prime_at_zero() const;

  double weight(double alpha, double beta, double q) const {
    const double w = g(-alpha - beta * q);
    return w > 0.0 ? w : 0.0;
  }

 private:
  explicit Regularizer(RegKind kind) : kind_(kind) {}
  RegKind kind_;
};

enum class SolveStatus { converged, infeasible, clamped };

std::string to_string(SolveStatus status);
SolveStatus solve_status_from_string(const std::string& name);

/// Multipliers of one per-state constrained extraction problem together with
/// the residuals of the two first-order conditions:
///   residual_norm  = E_mu[max(g(-alpha - beta*q), 0)] - 1
///   residual_align = E_mu[q * max(g(-alpha - beta*q), 0)] - v_target
struct StateMultipliers {
  double alpha = 0.0;
  double beta = 0.0;
  double residual_norm = 0.0;
  double residual_align = 0.0;
  SolveStatus status = SolveStatus::converged;
};

struct MultiplierTable {
  std::vector<StateMultipliers> rows;

  bool empty() const { return rows.empty(); }
  nlohmann::json to_json() const;
  static MultiplierTable from_json(const nlohmann::json& j);
};

/// Log-regularizer normalization multiplier in closed form:
/// alpha = logsumexp of -beta*q under mu, minus one. beta = 0 gives -1;
/// a single supported action gives -beta*q - 1.
double alpha_from_beta_log(std::span<const double> q, std::span<const double> mu,
                           double beta);

/// Root of E_tilted[q] = v_target where the tilted measure is
/// mu * exp(-beta*q) normalized; the map is strictly decreasing in beta, so
/// bisection over an expanding bracket (starting half-width bracket_init)
/// converges. All supported q equal to v_target returns 0 by convention;
/// v_target outside the open supported hull raises InfeasibleError. The
/// returned beta satisfies |E_tilted[q] - v_target| < tol.
double solve_beta_log(std::span<const double> q, std::span<const double> mu,
                      double v_target, double tol, double bracket_init = 1.0);

struct GradientSolveOptions {
  double lr = 3e-5;
  std::int64_t max_iters = 100000;
  double tol = 1e-6;
  double grad_clip = 1.0;  // max Euclidean norm of one update step
  double alpha0 = -1.0;    // neutral start: unit weights
  double beta0 = 0.0;
};

/// First-order solve of the multiplier problem: ascent on the concave dual
/// objective for the log member, descent on the convex truncated-quadratic
/// objective for the linear member. Both reduce to stepping along the
/// clipped residual vector. Stops when max(|residual_norm|, |residual_align|)
/// < tol; hitting max_iters returns the best iterate with status clamped.
/// v_target outside the open supported hull raises InfeasibleError.
StateMultipliers solve_multipliers_gradient(std::span<const double> q,
                                            std::span<const double> mu,
                                            double v_target, const Regularizer& reg,
                                            const GradientSolveOptions& opts = {});

/// Residuals of the two first-order conditions at (alpha, beta).
std::pair<double, double> multiplier_residuals(double alpha, double beta,
                                               std::span<const double> q,
                                               std::span<const double> mu,
                                               double v_target,
                                               const Regularizer& reg);

/// Solve one state with the best available route: closed form (bisection plus
/// logsumexp) for the log member, auto-tuned gradient descent for the linear
/// member. Infeasible targets come back with status infeasible and NaN
/// multipliers instead of throwing, so callers can fall back per state.
StateMultipliers solve_state_multipliers(std::span<const double> q,
                                         std::span<const double> mu, double v_target,
                                         const Regularizer& reg, double tol = 1e-10);

}  // namespace alignrl
