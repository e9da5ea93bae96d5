#include "alignrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "alignrl/rng.hpp"

namespace alignrl {

void SimplexInstance::validate() const {
  if (mu.empty() || mu.size() != q.size())
    throw ConfigError("SimplexInstance: mu and q must be equal-length and non-empty");
  double total = 0.0;
  for (const double m : mu) {
    if (!(m > 0.0))
      throw ConfigError("SimplexInstance: mu must be strictly positive");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw ConfigError("SimplexInstance: mu sums to " + std::to_string(total));
  for (const double qi : q)
    if (!std::isfinite(qi)) throw ConfigError("SimplexInstance: non-finite q entry");
  if (!std::isfinite(v_target))
    throw ConfigError("SimplexInstance: non-finite v_target");
  if (!(eta >= 0.0)) throw ConfigError("SimplexInstance: eta must be non-negative");
}

std::vector<double> project_to_simplex(std::span<const double> x) {
  if (x.empty()) throw ConfigError("project_to_simplex: empty input");
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i] - theta, 0.0);
  return out;
}

double constrained_objective(const SimplexInstance& inst, std::span<const double> pi) {
  if (pi.size() != inst.mu.size())
    throw ConfigError("constrained_objective: pi size mismatch");
  // E_pi[f(pi/mu)] written as sum mu*h(pi/mu): h(0) = 0 keeps vertices finite.
  double total = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i)
    total += inst.mu[i] * inst.reg.h(std::max(pi[i], 0.0) / inst.mu[i]);
  return total;
}

double soft_objective(const SimplexInstance& inst, std::span<const double> pi, double v) {
  double total = constrained_objective(inst, pi);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double gap = inst.q[i] - v;
    total += std::max(pi[i], 0.0) * inst.eta * gap * gap;
  }
  return total;
}

namespace {

constexpr double kRatioFloor = 1e-300;  // keeps h' finite at the boundary

double alignment_gap(const SimplexInstance& inst, std::span<const double> pi) {
  double c = -inst.v_target;
  for (std::size_t i = 0; i < pi.size(); ++i) c += pi[i] * inst.q[i];
  return c;
}

/// Objective and gradient of one inner subproblem: the augmented Lagrangian
/// of the hard variant, or the soft objective at a fixed v.
struct InnerProblem {
  const SimplexInstance* inst;
  bool hard = true;
  double lambda = 0.0;
  double rho = 0.0;
  double v = 0.0;

  double value(std::span<const double> pi) const {
    if (!hard) return soft_objective(*inst, pi, v);
    const double c = alignment_gap(*inst, pi);
    return constrained_objective(*inst, pi) + lambda * c + 0.5 * rho * c * c;
  }

  void gradient(std::span<const double> pi, std::vector<double>& grad) const {
    const double common = hard ? lambda + rho * alignment_gap(*inst, pi) : 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
      const double ratio = std::max(pi[i] / inst->mu[i], kRatioFloor);
      grad[i] = inst->reg.h_prime(ratio);
      if (hard) {
        grad[i] += common * inst->q[i];
      } else {
        const double gap = inst->q[i] - v;
        grad[i] += inst->eta * gap * gap;
      }
    }
  }
};

/// First-order minimization over the simplex with a backtracking line search.
/// The update geometry follows the regularizer boundary behavior: finite
/// h'(0) (linear member) uses additive steps with Euclidean projection and a
/// majorization acceptance test; infinite h'(0) (log member) uses
/// exponentiated-gradient steps, whose multiplicative decay can express the
/// sub-epsilon masses such optima demand, with monotone acceptance. Stops
/// when the accepted step moves no coordinate by more than tol.
std::vector<double> minimize_on_simplex(const InnerProblem& prob,
                                        std::vector<double> pi, int max_iters,
                                        double tol) {
  const std::size_t n = pi.size();
  const bool entropic = std::isinf(prob.inst->reg.h_prime_at_zero());
  std::vector<double> grad(n), trial(n);
  double f = prob.value(pi);
  double t = 1.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    prob.gradient(pi, grad);
    t = std::min(t * 2.0, 1e6);
    bool accepted = false;
    double step_inf = 0.0;
    while (t > 1e-18) {
      if (entropic) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, -t * grad[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          z += trial[i] = pi[i] * std::exp(-t * grad[i] - peak);
        for (double& v : trial) v /= z;
      } else {
        for (std::size_t i = 0; i < n; ++i) trial[i] = pi[i] - t * grad[i];
        trial = project_to_simplex(trial);
      }
      double inner = 0.0, sq = 0.0;
      step_inf = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = trial[i] - pi[i];
        inner += grad[i] * d;
        sq += d * d;
        step_inf = std::max(step_inf, std::abs(d));
      }
      const double fc = prob.value(trial);
      const double bound = entropic ? f : f + inner + sq / (2.0 * t);
      if (fc <= bound + 1e-15 * (1.0 + std::abs(f))) {
        pi.swap(trial);
        f = fc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || step_inf < tol) break;
  }
  return pi;
}

std::vector<double> restart_point(const SimplexInstance& inst, int restart,
                                  std::uint64_t seed) {
  if (restart == 0) return inst.mu;
  Rng rng(substream_seed(seed, "oracle-restarts", static_cast<std::uint64_t>(restart)));
  std::vector<double> pi(inst.mu.size());
  double total = 0.0;
  for (double& p : pi) total += p = -std::log(1.0 - rng.uniform01());
  for (double& p : pi) p /= total;
  return pi;
}

/// Exact projection onto {sum pi = 1, <pi, q> = v}, re-clipping negatives and
/// re-projecting until both constraints hold at machine precision. The
/// optimization already happened; this only restores feasibility.
void feasibility_polish(std::vector<double>& pi, const SimplexInstance& inst) {
  const std::size_t n = pi.size();
  double sq = 0.0, sqq = 0.0;
  for (const double qi : inst.q) {
    sq += qi;
    sqq += qi * qi;
  }
  const double det = static_cast<double>(n) * sqq - sq * sq;
  if (det <= 1e-14 * std::max(1.0, sqq)) {
    // All q equal: the alignment row is parallel to the simplex constraint.
    double total = std::accumulate(pi.begin(), pi.end(), 0.0);
    if (total > 0.0)
      for (double& p : pi) p /= total;
    return;
  }
  for (int round = 0; round < 10; ++round) {
    double r1 = -1.0, r2 = -inst.v_target;
    for (std::size_t i = 0; i < n; ++i) {
      r1 += pi[i];
      r2 += pi[i] * inst.q[i];
    }
    const double y1 = (sqq * r1 - sq * r2) / det;
    const double y2 = (static_cast<double>(n) * r2 - sq * r1) / det;
    double min_p = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      pi[i] -= y1 + y2 * inst.q[i];
      min_p = std::min(min_p, pi[i]);
    }
    if (min_p >= -1e-15) break;
    for (double& p : pi) p = std::max(p, 0.0);
  }
  for (double& p : pi) p = std::max(p, 0.0);
}

/// Exhaustive walk of the feasible set at resolution 1e-3 for n <= 3. Returns
/// the best objective seen, or +inf when the walk does not apply.
double grid_best_objective(const SimplexInstance& inst,
                           const std::vector<double>& base) {
  const std::size_t n = inst.mu.size();
  double best = std::numeric_limits<double>::infinity();
  if (n == 2) {
    const double denom = inst.q[1] - inst.q[0];
    if (std::abs(denom) < 1e-14) return best;
    const double p1 = (inst.v_target - inst.q[0]) / denom;
    if (p1 < -1e-9 || p1 > 1.0 + 1e-9) return best;
    const std::vector<double> pi{std::clamp(1.0 - p1, 0.0, 1.0),
                                 std::clamp(p1, 0.0, 1.0)};
    return constrained_objective(inst, pi);
  }
  // n == 3: the feasible set is a segment along the null direction of the
  // two constraint rows; walk it from the polished base point.
  const double d0 = inst.q[1] - inst.q[2];
  const double d1 = inst.q[2] - inst.q[0];
  const double d2 = inst.q[0] - inst.q[1];
  const double d_max = std::max({std::abs(d0), std::abs(d1), std::abs(d2)});
  if (d_max < 1e-14) return best;
  const double dir[3] = {d0, d1, d2};
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dir[i]) < 1e-14) continue;
    const double bound = -base[i] / dir[i];
    if (dir[i] > 0.0)
      t_lo = std::max(t_lo, bound);
    else
      t_hi = std::min(t_hi, bound);
  }
  if (!(t_lo <= t_hi)) return best;
  const double step = 1e-3 / d_max;
  std::vector<double> pi(3);
  for (double t = t_lo; t <= t_hi + step / 2; t += step) {
    const double tc = std::min(t, t_hi);
    for (int i = 0; i < 3; ++i) pi[i] = std::max(base[i] + tc * dir[i], 0.0);
    best = std::min(best, constrained_objective(inst, pi));
  }
  return best;
}

}  // namespace

std::vector<double> oracle_ipf(const SimplexInstance& inst, const OracleOptions& opts) {
  inst.validate();
  const double q_min = *std::min_element(inst.q.begin(), inst.q.end());
  const double q_max = *std::max_element(inst.q.begin(), inst.q.end());
  const double scale = std::max({1.0, std::abs(q_min), std::abs(q_max)});
  if (inst.v_target < q_min - 1e-12 * scale || inst.v_target > q_max + 1e-12 * scale)
    throw InfeasibleError("oracle_ipf: v_target " + std::to_string(inst.v_target) +
                          " outside the hull [" + std::to_string(q_min) + ", " +
                          std::to_string(q_max) + "]");

  std::vector<double> best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    std::vector<double> pi = restart_point(inst, restart, opts.seed);
    InnerProblem prob;
    prob.inst = &inst;
    prob.hard = true;
    prob.lambda = 0.0;
    prob.rho = opts.penalty0;
    prob.v = inst.v_target;
    for (int round = 0; round < opts.outer_rounds; ++round) {
      pi = minimize_on_simplex(prob, std::move(pi), opts.inner_iters, opts.tol);
      prob.lambda += prob.rho * alignment_gap(inst, pi);
      prob.rho *= opts.penalty_growth;
    }
    feasibility_polish(pi, inst);
    const double obj = constrained_objective(inst, pi);
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(pi);
    }
  }

  if (inst.mu.size() <= 3) {
    const double grid_best = grid_best_objective(inst, best);
    if (grid_best < best_obj - 1e-5 * (1.0 + std::abs(best_obj)))
      throw NumericError("oracle_ipf: grid walk found objective " +
                         std::to_string(grid_best) + " below the solver's " +
                         std::to_string(best_obj));
  }
  return best;
}

SoftSolution oracle_ipf_soft(const SimplexInstance& inst, VMode mode,
                             const OracleOptions& opts) {
  inst.validate();
  const auto solve_at = [&](double v, std::vector<double> warm,
                            bool with_restarts) {
    InnerProblem prob;
    prob.inst = &inst;
    prob.hard = false;
    prob.v = v;
    std::vector<double> best;
    double best_obj = std::numeric_limits<double>::infinity();
    const int restarts = with_restarts ? std::max(1, opts.restarts) : 1;
    for (int restart = 0; restart < restarts; ++restart) {
      std::vector<double> pi =
          warm.empty() || restart > 0 ? restart_point(inst, restart, opts.seed) : warm;
      pi = minimize_on_simplex(prob, std::move(pi), opts.inner_iters, opts.tol);
      const double obj = soft_objective(inst, pi, v);
      if (obj < best_obj) {
        best_obj = obj;
        best = std::move(pi);
      }
    }
    return best;
  };

  if (mode == VMode::fixed)
    return {solve_at(inst.v_target, {}, true), inst.v_target};

  double v = inst.v_target;
  std::vector<double> pi = solve_at(v, {}, true);
  for (int round = 0; round < 200; ++round) {
    double v_new = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) v_new += pi[i] * inst.q[i];
    if (std::abs(v_new - v) < 1e-12) break;
    v = v_new;
    pi = solve_at(v, pi, false);
  }
  return {pi, v};
}

double KktReport::max_residual() const {
  return std::max({stationarity, primal_norm, primal_align, complementary_slackness,
                   dual_feasibility});
}

nlohmann::json KktReport::to_json() const {
  return nlohmann::json{{"stationarity", stationarity},
                        {"primal_norm", primal_norm},
                        {"primal_align", primal_align},
                        {"complementary_slackness", complementary_slackness},
                        {"dual_feasibility", dual_feasibility},
                        {"lambda", lambda}};
}

KktReport kkt_check(std::span<const double> pi, std::span<const double> mu,
                    std::span<const double> q, double v_target, double alpha,
                    double beta, const Regularizer& reg) {
  if (pi.size() != mu.size() || pi.size() != q.size() || pi.empty())
    throw ConfigError("kkt_check: pi, mu, q must be equal-length and non-empty");
  constexpr double kZeroTol = 1e-12;
  KktReport report;
  report.lambda.assign(pi.size(), 0.0);
  double sum = 0.0, align = 0.0, neg_mass = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (!(mu[i] > 0.0)) throw ConfigError("kkt_check: mu must be strictly positive");
    sum += pi[i];
    align += pi[i] * q[i];
    neg_mass += std::max(0.0, -pi[i]);
    const double ratio = std::max(pi[i], 0.0) / mu[i];
    const double slope = reg.h_prime(std::max(ratio, kRatioFloor)) + alpha + beta * q[i];
    if (pi[i] > kZeroTol) {
      // Active action: the multiplier on pi >= 0 must vanish.
      report.stationarity = std::max(report.stationarity, std::abs(slope));
    } else {
      report.lambda[i] = std::max(slope, 0.0);
      report.stationarity = std::max(report.stationarity, std::max(-slope, 0.0));
    }
    report.complementary_slackness =
        std::max(report.complementary_slackness,
                 std::abs(report.lambda[i] * std::max(pi[i], 0.0)));
    report.dual_feasibility =
        std::max(report.dual_feasibility, std::max(-report.lambda[i], 0.0));
  }
  report.primal_norm = std::abs(sum - 1.0) + neg_mass;
  report.primal_align = std::abs(align - v_target);
  return report;
}

double kl_rows(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty())
    throw ConfigError("kl_rows: rows must be equal-length and non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !(q[i] >= 0.0))
      throw ConfigError("kl_rows: negative or non-finite entry");
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

}  // namespace alignrl
