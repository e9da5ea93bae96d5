#include "alignrl/mdp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace alignrl {

namespace {

constexpr double kRowSumTol = 1e-8;

void check_distribution(std::span<const double> row, const std::string& what) {
  double total = 0.0;
  for (const double p : row) {
    if (!(p >= 0.0))
      throw ConfigError(what + ": negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kRowSumTol)
    throw ConfigError(what + ": row sums to " + std::to_string(total) + ", expected 1");
}

}  // namespace

void Mdp::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw ConfigError("Mdp: n_states and n_actions must be positive");
  const std::size_t ns = static_cast<std::size_t>(n_states);
  const std::size_t na = static_cast<std::size_t>(n_actions);
  if (transition.size() != ns * na * ns)
    throw ConfigError("Mdp: transition size mismatch");
  if (reward.size() != ns * na) throw ConfigError("Mdp: reward size mismatch");
  if (initial_dist.size() != ns) throw ConfigError("Mdp: initial_dist size mismatch");
  if (!(gamma >= 0.0) || gamma >= 1.0)
    throw ConfigError("Mdp: gamma must lie in [0, 1)");
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      check_distribution(transition_row(s, a),
                         "Mdp transition row (s=" + std::to_string(s) +
                             ", a=" + std::to_string(a) + ")");
  check_distribution(initial_dist, "Mdp initial_dist");
  for (const double r : reward)
    if (!std::isfinite(r)) throw ConfigError("Mdp: non-finite reward entry");
  if (!state_coords.empty()) {
    if (state_coords.size() != ns)
      throw ConfigError("Mdp: state_coords must have one row per state");
    const std::size_t dim = state_coords.front().size();
    if (dim == 0) throw ConfigError("Mdp: state_coords rows must be non-empty");
    for (const auto& row : state_coords)
      if (row.size() != dim)
        throw ConfigError("Mdp: ragged state_coords rows");
  }
}

nlohmann::json Mdp::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (int s = 0; s < n_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < n_actions; ++a) {
      const auto row = transition_row(s, a);
      per_action.push_back(std::vector<double>(row.begin(), row.end()));
    }
    t.push_back(std::move(per_action));
  }
  nlohmann::json rw = nlohmann::json::array();
  for (int s = 0; s < n_states; ++s) {
    std::vector<double> row(n_actions);
    for (int a = 0; a < n_actions; ++a) row[a] = r(s, a);
    rw.push_back(std::move(row));
  }
  nlohmann::json j{{"n_states", n_states},
                   {"n_actions", n_actions},
                   {"gamma", gamma},
                   {"transition", std::move(t)},
                   {"reward", std::move(rw)},
                   {"initial_dist", initial_dist}};
  j["state_coords"] = state_coords.empty() ? nlohmann::json() : nlohmann::json(state_coords);
  return j;
}

Mdp Mdp::from_json(const nlohmann::json& j) {
  Mdp m;
  try {
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    m.gamma = j.at("gamma").get<double>();
    if (m.n_states <= 0 || m.n_actions <= 0)
      throw ConfigError("Mdp::from_json: non-positive dimensions");
    const std::size_t ns = static_cast<std::size_t>(m.n_states);
    const std::size_t na = static_cast<std::size_t>(m.n_actions);
    m.transition.reserve(ns * na * ns);
    for (const auto& per_action : j.at("transition"))
      for (const auto& row : per_action)
        for (const auto& p : row) m.transition.push_back(p.get<double>());
    m.reward.reserve(ns * na);
    for (const auto& row : j.at("reward"))
      for (const auto& r : row) m.reward.push_back(r.get<double>());
    m.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    if (j.contains("state_coords") && !j.at("state_coords").is_null())
      m.state_coords = j.at("state_coords").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("Mdp::from_json: malformed document: ") + e.what());
  }
  m.validate();
  return m;
}

void TabularPolicy::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw ConfigError("TabularPolicy: n_states and n_actions must be positive");
  if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
    throw ConfigError("TabularPolicy: probs size mismatch");
  for (int s = 0; s < n_states; ++s)
    check_distribution(row(s), "TabularPolicy row (s=" + std::to_string(s) + ")");
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  if (n_states <= 0 || n_actions <= 0)
    throw ConfigError("TabularPolicy::uniform: non-positive dimensions");
  TabularPolicy pi;
  pi.n_states = n_states;
  pi.n_actions = n_actions;
  pi.probs.assign(static_cast<std::size_t>(n_states) * n_actions,
                  1.0 / static_cast<double>(n_actions));
  return pi;
}

nlohmann::json TabularPolicy::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int s = 0; s < n_states; ++s) {
    const auto r = row(s);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return nlohmann::json{{"n_states", n_states}, {"n_actions", n_actions}, {"probs", rows}};
}

TabularPolicy TabularPolicy::from_json(const nlohmann::json& j) {
  TabularPolicy pi;
  try {
    pi.n_states = j.at("n_states").get<int>();
    pi.n_actions = j.at("n_actions").get<int>();
    for (const auto& row : j.at("probs"))
      for (const auto& p : row) pi.probs.push_back(p.get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("TabularPolicy::from_json: malformed document: ") + e.what());
  }
  pi.validate();
  return pi;
}

namespace {

struct GridGeometry {
  int width, height;
  // Moves indexed N, E, S, W.
  static constexpr int kDx[4] = {0, 1, 0, -1};
  static constexpr int kDy[4] = {-1, 0, 1, 0};

  int clamp_move(int s, int dir) const {
    const int x = s % width;
    const int y = s / width;
    const int nx = x + kDx[dir];
    const int ny = y + kDy[dir];
    if (nx < 0 || nx >= width || ny < 0 || ny >= height) return s;
    return ny * width + nx;
  }
};

}  // namespace

Mdp build_gridworld(int width, int height, const std::vector<int>& goal_cells,
                    double step_reward, double goal_reward, double slip_prob,
                    double gamma) {
  if (width <= 0 || height <= 0)
    throw ConfigError("build_gridworld: width and height must be positive");
  if (slip_prob < 0.0 || slip_prob > 1.0)
    throw ConfigError("build_gridworld: slip_prob must lie in [0, 1]");
  if (!(gamma >= 0.0) || gamma >= 1.0)
    throw ConfigError("build_gridworld: gamma must lie in [0, 1)");
  const int n = width * height;
  std::vector<bool> goal(n, false);
  for (const int g : goal_cells) {
    if (g < 0 || g >= n)
      throw ConfigError("build_gridworld: goal cell " + std::to_string(g) + " out of range");
    goal[g] = true;
  }
  int n_free = 0;
  for (int s = 0; s < n; ++s) n_free += goal[s] ? 0 : 1;
  if (n_free == 0)
    throw ConfigError("build_gridworld: every cell is a goal; no start states remain");

  const GridGeometry geo{width, height};
  Mdp m;
  m.n_states = n;
  m.n_actions = 4;
  m.gamma = gamma;
  m.transition.assign(static_cast<std::size_t>(n) * 4 * n, 0.0);
  m.reward.assign(static_cast<std::size_t>(n) * 4, 0.0);
  m.initial_dist.assign(n, 0.0);
  m.state_coords.resize(n);
  for (int s = 0; s < n; ++s) {
    m.state_coords[s] = {static_cast<double>(s % width), static_cast<double>(s / width)};
    if (!goal[s]) m.initial_dist[s] = 1.0 / n_free;
  }

  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (goal[s]) {
        m.p(s, a, s) = 1.0;  // absorbing, zero reward
        continue;
      }
      // Intended move plus slip to each perpendicular direction.
      const int perp1 = (a + 1) % 4;
      const int perp2 = (a + 3) % 4;
      m.p(s, a, geo.clamp_move(s, a)) += 1.0 - slip_prob;
      m.p(s, a, geo.clamp_move(s, perp1)) += slip_prob / 2.0;
      m.p(s, a, geo.clamp_move(s, perp2)) += slip_prob / 2.0;
      double p_goal = 0.0;
      for (int s2 = 0; s2 < n; ++s2)
        if (goal[s2]) p_goal += m.p(s, a, s2);
      m.r(s, a) = step_reward + p_goal * (goal_reward - step_reward);
    }
  }
  m.validate();
  return m;
}

bool is_absorbing(const Mdp& mdp, int s) {
  for (int a = 0; a < mdp.n_actions; ++a)
    if (mdp.p(s, a, s) != 1.0 || mdp.r(s, a) != 0.0) return false;
  return true;
}

namespace {

constexpr int kDirectSolveLimit = 2000;
constexpr double kBellmanResidualTol = 1e-8;

double bellman_residual(const Mdp& mdp, const TabularPolicy& pi,
                        const StateValueTable& v) {
  double worst = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    double backup = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (pi.prob(s, a) == 0.0) continue;
      double next = 0.0;
      const auto row = mdp.transition_row(s, a);
      for (int s2 = 0; s2 < mdp.n_states; ++s2) next += row[s2] * v[s2];
      backup += pi.prob(s, a) * (mdp.r(s, a) + mdp.gamma * next);
    }
    worst = std::max(worst, std::abs(backup - v[s]));
  }
  return worst;
}

}  // namespace

StateValueTable exact_policy_evaluation(const Mdp& mdp, const TabularPolicy& pi) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw ConfigError("exact_policy_evaluation: policy shape does not match MDP");
  const int n = mdp.n_states;
  StateValueTable v(n, 0.0);

  if (n <= kDirectSolveLimit) {
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(n);
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double w = pi.prob(s, a);
        if (w == 0.0) continue;
        r_pi(s) += w * mdp.r(s, a);
        const auto row = mdp.transition_row(s, a);
        for (int s2 = 0; s2 < n; ++s2) system(s, s2) -= mdp.gamma * w * row[s2];
      }
    }
    const Eigen::VectorXd sol = system.partialPivLu().solve(r_pi);
    for (int s = 0; s < n; ++s) v[s] = sol(s);
  } else {
    StateValueTable next(n, 0.0);
    for (std::int64_t iter = 0; iter < 1000000; ++iter) {
      double diff = 0.0;
      for (int s = 0; s < n; ++s) {
        double backup = 0.0;
        for (int a = 0; a < mdp.n_actions; ++a) {
          const double w = pi.prob(s, a);
          if (w == 0.0) continue;
          double nxt = 0.0;
          const auto row = mdp.transition_row(s, a);
          for (int s2 = 0; s2 < n; ++s2) nxt += row[s2] * v[s2];
          backup += w * (mdp.r(s, a) + mdp.gamma * nxt);
        }
        next[s] = backup;
        diff = std::max(diff, std::abs(backup - v[s]));
      }
      v.swap(next);
      if (diff < 1e-10) break;
    }
  }

  const double resid = bellman_residual(mdp, pi, v);
  if (resid > kBellmanResidualTol)
    throw NumericError("exact_policy_evaluation: Bellman residual " +
                       std::to_string(resid) + " exceeds 1e-8");
  return v;
}

QTable exact_q_from_v(const Mdp& mdp, const StateValueTable& v) {
  if (v.size() != static_cast<std::size_t>(mdp.n_states))
    throw ConfigError("exact_q_from_v: value table size mismatch");
  QTable q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double next = 0.0;
      const auto row = mdp.transition_row(s, a);
      for (int s2 = 0; s2 < mdp.n_states; ++s2) next += row[s2] * v[s2];
      q(s, a) = mdp.r(s, a) + mdp.gamma * next;
    }
  }
  return q;
}

double policy_return(const Mdp& mdp, const TabularPolicy& pi,
                     const std::vector<double>& initial_dist) {
  if (initial_dist.size() != static_cast<std::size_t>(mdp.n_states))
    throw ConfigError("policy_return: initial distribution size mismatch");
  const StateValueTable v = exact_policy_evaluation(mdp, pi);
  double j = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) j += initial_dist[s] * v[s];
  return j;
}

double policy_return(const Mdp& mdp, const TabularPolicy& pi) {
  return policy_return(mdp, pi, mdp.initial_dist);
}

QTable optimal_q_values(const Mdp& mdp, double tol, std::int64_t max_iters) {
  const int n = mdp.n_states;
  StateValueTable v(n, 0.0), next(n, 0.0);
  for (std::int64_t iter = 0; iter < max_iters; ++iter) {
    double diff = 0.0;
    for (int s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.n_actions; ++a) {
        double nxt = 0.0;
        const auto row = mdp.transition_row(s, a);
        for (int s2 = 0; s2 < n; ++s2) nxt += row[s2] * v[s2];
        best = std::max(best, mdp.r(s, a) + mdp.gamma * nxt);
      }
      next[s] = best;
      diff = std::max(diff, std::abs(best - v[s]));
    }
    v.swap(next);
    if (diff < tol) break;
  }
  return exact_q_from_v(mdp, v);
}

TabularPolicy greedy_policy(const QTable& q) {
  TabularPolicy pi;
  pi.n_states = q.n_states;
  pi.n_actions = q.n_actions;
  pi.probs.assign(static_cast<std::size_t>(q.n_states) * q.n_actions, 0.0);
  for (int s = 0; s < q.n_states; ++s) {
    int best = 0;
    for (int a = 1; a < q.n_actions; ++a)
      if (q(s, a) > q(s, best)) best = a;
    pi.prob(s, best) = 1.0;
  }
  return pi;
}

TabularPolicy mix_policies(const TabularPolicy& a, const TabularPolicy& b, double w) {
  if (a.n_states != b.n_states || a.n_actions != b.n_actions)
    throw ConfigError("mix_policies: shape mismatch");
  if (w < 0.0 || w > 1.0) throw ConfigError("mix_policies: weight must lie in [0, 1]");
  TabularPolicy out = a;
  for (std::size_t i = 0; i < out.probs.size(); ++i)
    out.probs[i] = w * a.probs[i] + (1.0 - w) * b.probs[i];
  return out;
}

}  // namespace alignrl
