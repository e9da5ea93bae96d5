#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "alignrl/errors.hpp"

namespace alignrl {

/// Finite MDP with dense transition kernel P(s'|s,a) and expected immediate
/// reward R(s,a). Instances are treated as immutable after construction.
struct Mdp {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  std::vector<double> transition;    // row-major [s][a][s']
  std::vector<double> reward;        // [s][a]
  std::vector<double> initial_dist;  // [s]
  std::vector<std::vector<double>> state_coords;  // optional, [s][dim]; empty when absent

  double p(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double& p(int s, int a, int s2) {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const {
    return reward[static_cast<std::size_t>(s) * n_actions + a];
  }
  double& r(int s, int a) {
    return reward[static_cast<std::size_t>(s) * n_actions + a];
  }
  std::span<const double> transition_row(int s, int a) const {
    return {transition.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states,
            static_cast<std::size_t>(n_states)};
  }

  /// Throws ConfigError on shape mismatches, rows not summing to one,
  /// negative probabilities, or gamma outside [0, 1).
  void validate() const;

  nlohmann::json to_json() const;
  static Mdp from_json(const nlohmann::json& j);
};

/// Stochastic policy over a finite MDP, one probability row per state.
struct TabularPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // [s][a]

  double prob(int s, int a) const {
    return probs[static_cast<std::size_t>(s) * n_actions + a];
  }
  double& prob(int s, int a) {
    return probs[static_cast<std::size_t>(s) * n_actions + a];
  }
  std::span<const double> row(int s) const {
    return {probs.data() + static_cast<std::size_t>(s) * n_actions,
            static_cast<std::size_t>(n_actions)};
  }

  void validate() const;
  static TabularPolicy uniform(int n_states, int n_actions);

  nlohmann::json to_json() const;
  static TabularPolicy from_json(const nlohmann::json& j);
};

/// Dense action-value table.
struct QTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> values;  // [s][a]

  QTable() = default;
  QTable(int ns, int na, double fill = 0.0)
      : n_states(ns), n_actions(na),
        values(static_cast<std::size_t>(ns) * static_cast<std::size_t>(na), fill) {}

  double operator()(int s, int a) const {
    return values[static_cast<std::size_t>(s) * n_actions + a];
  }
  double& operator()(int s, int a) {
    return values[static_cast<std::size_t>(s) * n_actions + a];
  }
  std::span<const double> row(int s) const {
    return {values.data() + static_cast<std::size_t>(s) * n_actions,
            static_cast<std::size_t>(n_actions)};
  }
};

using StateValueTable = std::vector<double>;

/// Rectangular gridworld with four moves (N, E, S, W), slip to the two
/// perpendicular directions with probability slip_prob/2 each, and absorbing
/// goal cells. Rewards are expected immediate rewards: a move pays
/// step_reward, plus (goal_reward - step_reward) weighted by the probability
/// of landing in a goal cell; goal cells self-loop with zero reward.
/// States are indexed row-major (s = y*width + x) and carry coords (x, y).
/// The initial distribution is uniform over non-goal cells.
Mdp build_gridworld(int width, int height, const std::vector<int>& goal_cells,
                    double step_reward, double goal_reward, double slip_prob,
                    double gamma);

/// True iff every action at s self-loops with zero reward. Marks the
/// absorbing cells that carry done semantics in generated datasets.
bool is_absorbing(const Mdp& mdp, int s);

/// V^pi via direct linear solve of (I - gamma*P_pi) V = R_pi when
/// n_states <= 2000, value iteration (tol 1e-10, cap 1e6 sweeps) otherwise.
/// The returned table satisfies the Bellman identity within 1e-8 sup-norm;
/// NumericError otherwise.
StateValueTable exact_policy_evaluation(const Mdp& mdp, const TabularPolicy& pi);

/// One Bellman backup: Q(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) V(s').
QTable exact_q_from_v(const Mdp& mdp, const StateValueTable& v);

/// Expected discounted return J(pi) = sum_s d0(s) V^pi(s).
double policy_return(const Mdp& mdp, const TabularPolicy& pi);
double policy_return(const Mdp& mdp, const TabularPolicy& pi,
                     const std::vector<double>& initial_dist);

/// Optimal action values by value iteration to sup-norm tol.
QTable optimal_q_values(const Mdp& mdp, double tol = 1e-12,
                        std::int64_t max_iters = 1000000);

/// Deterministic argmax policy; ties break toward the lowest action id.
TabularPolicy greedy_policy(const QTable& q);

/// Pointwise mixture w*a + (1-w)*b.
TabularPolicy mix_policies(const TabularPolicy& a, const TabularPolicy& b, double w);

}  // namespace alignrl
