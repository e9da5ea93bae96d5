#include "alignrl/multipliers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace alignrl {

Regularizer Regularizer::from_string(const std::string& name) {
  if (name == "log") return log();
  if (name == "linear") return linear();
  throw ConfigError("unknown regularizer '" + name + "' (expected 'log' or 'linear')");
}

double Regularizer::f(double x) const {
  if (!(x >= 0.0)) throw std::invalid_argument("Regularizer::f: negative ratio");
  return kind_ == RegKind::log_ratio ? std::log(x) : x - 1.0;
}

double Regularizer::h(double x) const {
  if (!(x >= 0.0)) throw std::invalid_argument("Regularizer::h: negative ratio");
  if (kind_ == RegKind::log_ratio) return x == 0.0 ? 0.0 : x * std::log(x);
  return x * x - x;
}

double Regularizer::h_prime(double x) const {
  if (!(x >= 0.0)) throw std::invalid_argument("Regularizer::h_prime: negative ratio");
  return kind_ == RegKind::log_ratio ? std::log(x) + 1.0 : 2.0 * x - 1.0;
}

double Regularizer::g(double y) const {
  // exp clamp keeps diverged multiplier iterates finite; the identity
  // g(h_prime(x)) = x is untouched for any representable x.
  if (kind_ == RegKind::log_ratio) return std::exp(std::min(y - 1.0, 700.0));
  return 0.5 * (y + 1.0);
}

double Regularizer::h_prime_at_zero() const {
  return kind_ == RegKind::log_ratio ? -std::numeric_limits<double>::infinity() : -1.0;
}

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::clamped: return "clamped";
  }
  throw ConfigError("to_string: unknown solve status");
}

SolveStatus solve_status_from_string(const std::string& name) {
  if (name == "converged") return SolveStatus::converged;
  if (name == "infeasible") return SolveStatus::infeasible;
  if (name == "clamped") return SolveStatus::clamped;
  throw ConfigError("unknown solve status '" + name + "'");
}

nlohmann::json MultiplierTable::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const StateMultipliers& row : rows) {
    out.push_back({{"alpha", row.alpha},
                   {"beta", row.beta},
                   {"residual_norm", row.residual_norm},
                   {"residual_align", row.residual_align},
                   {"status", to_string(row.status)}});
  }
  return out;
}

MultiplierTable MultiplierTable::from_json(const nlohmann::json& j) {
  MultiplierTable table;
  const auto number = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  try {
    for (const auto& row : j) {
      table.rows.push_back({number(row.at("alpha")), number(row.at("beta")),
                            number(row.at("residual_norm")),
                            number(row.at("residual_align")),
                            solve_status_from_string(row.at("status").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MultiplierTable::from_json: malformed document: ") +
                      e.what());
  }
  return table;
}

namespace {

struct SupportView {
  std::vector<double> q, mu;  // entries with mu > 0 only
  double q_min = 0.0, q_max = 0.0;
  double scale = 1.0;
};

SupportView support_view(std::span<const double> q, std::span<const double> mu,
                         const std::string& where) {
  if (q.empty() || q.size() != mu.size())
    throw ConfigError(where + ": q and mu must be equal-length and non-empty");
  SupportView view;
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(mu[i] >= 0.0)) throw ConfigError(where + ": negative or non-finite mu entry");
    if (!std::isfinite(q[i])) throw ConfigError(where + ": non-finite q entry");
    total += mu[i];
    if (mu[i] > 0.0) {
      view.mu.push_back(mu[i]);
      view.q.push_back(q[i]);
    }
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw ConfigError(where + ": mu sums to " + std::to_string(total) + ", expected 1");
  if (view.mu.empty()) throw ConfigError(where + ": empty support");
  view.q_min = *std::min_element(view.q.begin(), view.q.end());
  view.q_max = *std::max_element(view.q.begin(), view.q.end());
  view.scale = std::max({1.0, std::abs(view.q_min), std::abs(view.q_max)});
  return view;
}

/// Mean of q under mu tilted by exp(-beta*q); max-shifted so any beta is safe.
double tilted_mean(const SupportView& view, double beta) {
  double shift = -std::numeric_limits<double>::infinity();
  for (const double qi : view.q) shift = std::max(shift, -beta * qi);
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t i = 0; i < view.q.size(); ++i) {
    const double w = view.mu[i] * std::exp(-beta * view.q[i] - shift);
    s0 += w;
    s1 += w * view.q[i];
  }
  return s1 / s0;
}

bool degenerate_row(const SupportView& view) {
  return view.q_max - view.q_min <= 1e-12 * view.scale;
}

bool row_matches_target(const SupportView& view, double v_target) {
  return std::abs(view.q_min - v_target) <=
         1e-9 * std::max(view.scale, std::abs(v_target));
}

void require_interior_target(const SupportView& view, double v_target,
                             const std::string& where) {
  if (!(v_target > view.q_min) || !(v_target < view.q_max))
    throw InfeasibleError(where + ": v_target " + std::to_string(v_target) +
                          " outside the open supported hull (" +
                          std::to_string(view.q_min) + ", " +
                          std::to_string(view.q_max) + ")");
}

std::pair<double, double> residuals_on(const SupportView& view, double alpha,
                                       double beta, double v_target,
                                       const Regularizer& reg) {
  double rn = -1.0, ra = -v_target;
  for (std::size_t i = 0; i < view.q.size(); ++i) {
    const double w = reg.weight(alpha, beta, view.q[i]);
    rn += view.mu[i] * w;
    ra += view.mu[i] * view.q[i] * w;
  }
  return {rn, ra};
}

}  // namespace

double alpha_from_beta_log(std::span<const double> q, std::span<const double> mu,
                           double beta) {
  const SupportView view = support_view(q, mu, "alpha_from_beta_log");
  double shift = -std::numeric_limits<double>::infinity();
  for (const double qi : view.q) shift = std::max(shift, -beta * qi);
  double s0 = 0.0;
  for (std::size_t i = 0; i < view.q.size(); ++i)
    s0 += view.mu[i] * std::exp(-beta * view.q[i] - shift);
  return shift + std::log(s0) - 1.0;
}

double solve_beta_log(std::span<const double> q, std::span<const double> mu,
                      double v_target, double tol, double bracket_init) {
  if (!(tol > 0.0)) throw ConfigError("solve_beta_log: tol must be positive");
  if (!(bracket_init > 0.0))
    throw ConfigError("solve_beta_log: bracket_init must be positive");
  const SupportView view = support_view(q, mu, "solve_beta_log");

  if (degenerate_row(view)) {
    if (row_matches_target(view, v_target)) return 0.0;
    throw InfeasibleError("solve_beta_log: all supported q equal " +
                          std::to_string(view.q_min) + " but v_target is " +
                          std::to_string(v_target));
  }
  require_interior_target(view, v_target, "solve_beta_log");

  // tilted_mean is strictly decreasing with limits q_max (beta -> -inf) and
  // q_min (beta -> +inf); expand until the target is straddled.
  double lo = -bracket_init, hi = bracket_init;
  for (int guard = 0; tilted_mean(view, lo) < v_target; lo *= 2.0)
    if (++guard > 200)
      throw InfeasibleError("solve_beta_log: v_target too close to the hull boundary");
  for (int guard = 0; tilted_mean(view, hi) > v_target; hi *= 2.0)
    if (++guard > 200)
      throw InfeasibleError("solve_beta_log: v_target too close to the hull boundary");

  for (int iter = 0; iter < 500; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;  // bracket at machine width
    if (tilted_mean(view, mid) > v_target)
      lo = mid;
    else
      hi = mid;
  }
  const double beta = 0.5 * (lo + hi);
  const double residual = std::abs(tilted_mean(view, beta) - v_target);
  if (!(residual < tol))
    throw NumericError("solve_beta_log: tilted-mean residual " +
                       std::to_string(residual) + " not below tol " +
                       std::to_string(tol));
  return beta;
}

std::pair<double, double> multiplier_residuals(double alpha, double beta,
                                               std::span<const double> q,
                                               std::span<const double> mu,
                                               double v_target,
                                               const Regularizer& reg) {
  const SupportView view = support_view(q, mu, "multiplier_residuals");
  return residuals_on(view, alpha, beta, v_target, reg);
}

StateMultipliers solve_multipliers_gradient(std::span<const double> q,
                                            std::span<const double> mu,
                                            double v_target, const Regularizer& reg,
                                            const GradientSolveOptions& opts) {
  if (!(opts.lr > 0.0)) throw ConfigError("solve_multipliers_gradient: lr must be positive");
  if (opts.max_iters < 1)
    throw ConfigError("solve_multipliers_gradient: max_iters must be positive");
  if (!(opts.tol > 0.0)) throw ConfigError("solve_multipliers_gradient: tol must be positive");
  if (!(opts.grad_clip > 0.0))
    throw ConfigError("solve_multipliers_gradient: grad_clip must be positive");

  const SupportView view = support_view(q, mu, "solve_multipliers_gradient");
  if (degenerate_row(view)) {
    if (row_matches_target(view, v_target)) {
      StateMultipliers out;
      out.alpha = -1.0;  // unit weights: g(-alpha) = 1 for both members
      out.beta = 0.0;
      const auto [rn, ra] = residuals_on(view, out.alpha, out.beta, v_target, reg);
      out.residual_norm = rn;
      out.residual_align = ra;
      out.status = SolveStatus::converged;
      return out;
    }
    throw InfeasibleError("solve_multipliers_gradient: all supported q equal " +
                          std::to_string(view.q_min) + " but v_target is " +
                          std::to_string(v_target));
  }
  require_interior_target(view, v_target, "solve_multipliers_gradient");

  // For the log member the concave dual objective has gradient exactly equal
  // to the residual vector (ascent); for the linear member the convex primal
  // objective in (alpha, beta) has gradient equal to minus the residuals
  // (descent). Either way the update steps along the clipped residuals.
  double a = opts.alpha0, b = opts.beta0;
  StateMultipliers best;
  best.status = SolveStatus::clamped;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::int64_t iter = 0; iter < opts.max_iters; ++iter) {
    const auto [rn, ra] = residuals_on(view, a, b, v_target, reg);
    const double err = std::max(std::abs(rn), std::abs(ra));
    if (err < best_err) {
      best_err = err;
      best = {a, b, rn, ra, SolveStatus::clamped};
    }
    if (err < opts.tol) return {a, b, rn, ra, SolveStatus::converged};
    double step_n = rn, step_a = ra;
    const double norm = std::hypot(step_n, step_a);
    if (norm > opts.grad_clip) {
      step_n *= opts.grad_clip / norm;
      step_a *= opts.grad_clip / norm;
    }
    a += opts.lr * step_n;
    b += opts.lr * step_a;
  }
  return best;
}

StateMultipliers solve_state_multipliers(std::span<const double> q,
                                         std::span<const double> mu, double v_target,
                                         const Regularizer& reg, double tol) {
  try {
    if (reg.kind() == RegKind::log_ratio) {
      const double beta = solve_beta_log(q, mu, v_target, tol);
      const double alpha = alpha_from_beta_log(q, mu, beta);
      const auto [rn, ra] = multiplier_residuals(alpha, beta, q, mu, v_target, reg);
      if (!(std::max(std::abs(rn), std::abs(ra)) < 10.0 * tol))
        throw NumericError("solve_state_multipliers: closed form left residuals " +
                           std::to_string(rn) + ", " + std::to_string(ra));
      return {alpha, beta, rn, ra, SolveStatus::converged};
    }

    const SupportView view = support_view(q, mu, "solve_state_multipliers");
    GradientSolveOptions opts;
    const double q_abs = std::max(std::abs(view.q_min), std::abs(view.q_max));
    opts.lr = 1.0 / (0.5 * (1.0 + q_abs * q_abs) + 1e-12);  // inverse curvature bound
    opts.max_iters = 1000000;
    opts.tol = tol;
    return solve_multipliers_gradient(q, mu, v_target, reg, opts);
  } catch (const InfeasibleError&) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    StateMultipliers out{nan, nan, nan, nan, SolveStatus::infeasible};
    return out;
  }
}

}  // namespace alignrl
