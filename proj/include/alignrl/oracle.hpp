#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "alignrl/multipliers.hpp"

namespace alignrl {

/// One per-state constrained extraction problem handed to the brute-force
/// solvers: minimize E_pi[f(pi/mu)] over the simplex, subject (for the hard
/// variant) to E_pi[q] = v_target. mu must be strictly positive.
struct SimplexInstance {
  std::vector<double> mu;
  std::vector<double> q;
  double v_target = 0.0;
  Regularizer reg = Regularizer::log();
  double eta = 1.0;  // quadratic penalty level of the soft variant

  void validate() const;
};

struct OracleOptions {
  int outer_rounds = 20;      // augmented-Lagrangian rounds
  double penalty0 = 1.0;      // initial quadratic penalty, doubled per round
  double penalty_growth = 2.0;
  int inner_iters = 4000;     // projected-gradient steps per round
  int restarts = 3;
  double tol = 1e-11;         // inner step-size convergence threshold
  std::uint64_t seed = 0;     // feeds the restart initializer substream
};

/// Euclidean projection onto the probability simplex (sort-based).
std::vector<double> project_to_simplex(std::span<const double> x);

/// E_pi[f(pi/mu)].
double constrained_objective(const SimplexInstance& inst, std::span<const double> pi);

/// E_pi[f(pi/mu) + eta*(q - v)^2].
double soft_objective(const SimplexInstance& inst, std::span<const double> pi, double v);

/// Brute-force solution of the alignment-constrained problem: augmented
/// Lagrangian on E_pi[q] = v_target with first-order inner solves (Euclidean
/// projected gradient when h'(0) is finite, exponentiated gradient when it
/// diverges) and seeded restarts, followed by an exact affine-feasibility
/// polish. For
/// n <= 3 the result is cross-checked against an exhaustive grid walk of the
/// feasible segment at resolution 1e-3 (NumericError if the grid wins by more
/// than the resolution allows). v_target outside the closed hull of q raises
/// InfeasibleError.
std::vector<double> oracle_ipf(const SimplexInstance& inst, const OracleOptions& opts = {});

enum class VMode { fixed, joint };

struct SoftSolution {
  std::vector<double> pi;
  double v = 0.0;  // the v the objective was finally evaluated at
};

/// Brute-force solution of the soft variant. VMode::fixed keeps
/// inst.v_target; VMode::joint alternates the pi-minimization with
/// v <- E_pi[q] until v moves less than 1e-12.
SoftSolution oracle_ipf_soft(const SimplexInstance& inst, VMode mode,
                             const OracleOptions& opts = {});

/// First-order optimality scorecard of a candidate (pi, alpha, beta) for the
/// hard problem. lambda is reconstructed as max(h'(pi/mu) + alpha + beta*q, 0)
/// on zero-probability actions and must vanish elsewhere.
struct KktReport {
  double stationarity = 0.0;
  double primal_norm = 0.0;
  double primal_align = 0.0;
  double complementary_slackness = 0.0;
  double dual_feasibility = 0.0;
  std::vector<double> lambda;

  double max_residual() const;
  nlohmann::json to_json() const;
};

KktReport kkt_check(std::span<const double> pi, std::span<const double> mu,
                    std::span<const double> q, double v_target, double alpha,
                    double beta, const Regularizer& reg);

/// KL divergence sum p*log(p/q) with 0*log(0) = 0; support violations return
/// +infinity instead of throwing.
double kl_rows(std::span<const double> p, std::span<const double> q);

}  // namespace alignrl
