#include "alignrl/critic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace alignrl {

void CriticConfig::validate() const {
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ConfigError("CriticConfig: tau must lie strictly inside (0, 1)");
  if (!(gamma >= 0.0) || gamma >= 1.0)
    throw ConfigError("CriticConfig: gamma must lie in [0, 1)");
  if (max_sweeps < 1) throw ConfigError("CriticConfig: max_sweeps must be positive");
  if (!(tol > 0.0)) throw ConfigError("CriticConfig: tol must be positive");
  if (polyak < 0.0 || polyak > 1.0)
    throw ConfigError("CriticConfig: polyak must lie in [0, 1]");
}

double expectile_loss(double u, double tau) {
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ConfigError("expectile_loss: tau must lie strictly inside (0, 1)");
  const double m = u < 0.0 ? 1.0 - tau : tau;
  return m * u * u;
}

double solve_state_expectile(std::span<const double> values,
                             std::span<const double> weights, double tau,
                             double tol) {
  if (values.empty()) throw ConfigError("solve_state_expectile: empty value row");
  if (values.size() != weights.size())
    throw ConfigError("solve_state_expectile: values/weights size mismatch");
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ConfigError("solve_state_expectile: tau must lie strictly inside (0, 1)");
  if (!(tol > 0.0)) throw ConfigError("solve_state_expectile: tol must be positive");

  double w_total = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(weights[i] >= 0.0))
      throw ConfigError("solve_state_expectile: negative or non-finite weight");
    w_total += weights[i];
    mean += weights[i] * values[i];
  }
  if (w_total <= 0.0)
    throw ConfigError("solve_state_expectile: weights sum to zero");

  double v = mean / w_total;
  for (int iter = 0; iter < 10000; ++iter) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double m = values[i] < v ? 1.0 - tau : tau;
      num += weights[i] * m * values[i];
      den += weights[i] * m;
    }
    const double next = num / den;
    const double dv = std::abs(next - v);
    v = next;
    if (dv < tol) return v;
  }
  throw NumericError("solve_state_expectile: no fixed point after 10000 iterations");
}

namespace {

struct PairAggregate {
  double r_mean = 0.0;
  std::int64_t count = 0;
  // (s_next, fraction of this pair's records that bootstrap through s_next);
  // done records are excluded, so fractions can sum below one.
  std::vector<std::pair<int, double>> next_fractions;
};

}  // namespace

ValueTables train_critic(const TransitionDataset& data, const BehaviorModel& behavior,
                         const CriticConfig& config) {
  config.validate();
  const int n_states = behavior.probs.n_states;
  const int n_actions = behavior.probs.n_actions;
  if (data.transitions.empty()) throw ConfigError("train_critic: empty dataset");

  // Aggregate the dataset per (s, a); the Q step is linear in V, so per-pair
  // mean reward and bootstrap fractions are sufficient statistics.
  const std::size_t n_pairs =
      static_cast<std::size_t>(n_states) * static_cast<std::size_t>(n_actions);
  std::vector<PairAggregate> agg(n_pairs);
  std::vector<std::map<int, std::int64_t>> next_counts(n_pairs);
  for (std::size_t i = 0; i < data.transitions.size(); ++i) {
    const Transition& t = data.transitions[i];
    if (t.s < 0 || t.s >= n_states || t.a < 0 || t.a >= n_actions || t.s_next < 0 ||
        t.s_next >= n_states)
      throw ConfigError("train_critic: record " + std::to_string(i) +
                        " outside the behavior model's grid");
    const std::size_t k = static_cast<std::size_t>(t.s) * n_actions + t.a;
    agg[k].r_mean += t.r;
    agg[k].count++;
    if (!t.done) next_counts[k][t.s_next]++;
  }
  for (std::size_t k = 0; k < n_pairs; ++k) {
    if (agg[k].count == 0) continue;
    if (agg[k].count != behavior.count(static_cast<int>(k) / n_actions,
                                       static_cast<int>(k) % n_actions))
      throw ConfigError("train_critic: behavior model counts disagree with the dataset");
    agg[k].r_mean /= static_cast<double>(agg[k].count);
    for (const auto& [s_next, c] : next_counts[k])
      agg[k].next_fractions.emplace_back(
          s_next, static_cast<double>(c) / static_cast<double>(agg[k].count));
  }

  ValueTables out;
  out.tau = config.tau;
  out.gamma = config.gamma;
  out.q = QTable(n_states, n_actions, std::numeric_limits<double>::quiet_NaN());
  out.v.assign(n_states, 0.0);
  out.support.assign(n_pairs, 0);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    if (agg[k].count > 0) {
      out.support[k] = 1;
      out.q.values[k] = 0.0;
    }
  }

  const double inner_tol = config.tol * 1e-2;
  std::vector<double> row_values(n_actions), row_weights(n_actions);
  double residual = std::numeric_limits<double>::infinity();
  for (std::int64_t sweep = 0; sweep < config.max_sweeps; ++sweep) {
    residual = 0.0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
      if (!out.support[k]) continue;
      double backup = agg[k].r_mean;
      for (const auto& [s_next, frac] : agg[k].next_fractions)
        backup += config.gamma * frac * out.v[s_next];
      const double updated =
          config.polyak == 0.0
              ? backup
              : (1.0 - config.polyak) * out.q.values[k] + config.polyak * backup;
      residual = std::max(residual, std::abs(updated - out.q.values[k]));
      out.q.values[k] = updated;
    }
    for (int s = 0; s < n_states; ++s) {
      int n_sup = 0;
      for (int a = 0; a < n_actions; ++a) {
        if (!out.supported(s, a)) continue;
        row_values[n_sup] = out.q(s, a);
        row_weights[n_sup] = static_cast<double>(behavior.count(s, a));
        ++n_sup;
      }
      if (n_sup == 0) continue;
      const double updated = solve_state_expectile(
          std::span<const double>(row_values.data(), n_sup),
          std::span<const double>(row_weights.data(), n_sup), config.tau, inner_tol);
      residual = std::max(residual, std::abs(updated - out.v[s]));
      out.v[s] = updated;
    }
    if (residual < config.tol) return out;
  }
  throw NumericError("train_critic: residual " + std::to_string(residual) +
                     " after " + std::to_string(config.max_sweeps) + " sweeps");
}

nlohmann::json ValueTables::to_json() const {
  nlohmann::json q_rows = nlohmann::json::array();
  nlohmann::json mask_rows = nlohmann::json::array();
  for (int s = 0; s < q.n_states; ++s) {
    nlohmann::json q_row = nlohmann::json::array();
    nlohmann::json m_row = nlohmann::json::array();
    for (int a = 0; a < q.n_actions; ++a) {
      q_row.push_back(supported(s, a) ? nlohmann::json(q(s, a)) : nlohmann::json());
      m_row.push_back(supported(s, a) ? 1 : 0);
    }
    q_rows.push_back(std::move(q_row));
    mask_rows.push_back(std::move(m_row));
  }
  return nlohmann::json{{"q", std::move(q_rows)},
                        {"v", v},
                        {"tau", tau},
                        {"gamma", gamma},
                        {"support_mask", std::move(mask_rows)}};
}

ValueTables ValueTables::from_json(const nlohmann::json& j) {
  ValueTables out;
  try {
    out.tau = j.at("tau").get<double>();
    out.gamma = j.at("gamma").get<double>();
    out.v = j.at("v").get<std::vector<double>>();
    const auto& q_rows = j.at("q");
    const auto& mask_rows = j.at("support_mask");
    const int n_states = static_cast<int>(q_rows.size());
    if (n_states == 0 || mask_rows.size() != q_rows.size())
      throw ConfigError("ValueTables::from_json: empty or mismatched tables");
    const int n_actions = static_cast<int>(q_rows.at(0).size());
    out.q = QTable(n_states, n_actions, std::numeric_limits<double>::quiet_NaN());
    out.support.assign(static_cast<std::size_t>(n_states) * n_actions, 0);
    for (int s = 0; s < n_states; ++s) {
      if (static_cast<int>(q_rows.at(s).size()) != n_actions ||
          static_cast<int>(mask_rows.at(s).size()) != n_actions)
        throw ConfigError("ValueTables::from_json: ragged rows");
      for (int a = 0; a < n_actions; ++a) {
        const int flag = mask_rows.at(s).at(a).get<int>();
        if (flag != 0 && flag != 1)
          throw ConfigError("ValueTables::from_json: support_mask must be 0/1");
        if (flag == 1) {
          out.support[static_cast<std::size_t>(s) * n_actions + a] = 1;
          out.q(s, a) = q_rows.at(s).at(a).get<double>();
        } else if (!q_rows.at(s).at(a).is_null()) {
          throw ConfigError("ValueTables::from_json: unsupported entries must be null");
        }
      }
    }
    if (out.v.size() != static_cast<std::size_t>(n_states))
      throw ConfigError("ValueTables::from_json: v size mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ValueTables::from_json: malformed document: ") +
                      e.what());
  }
  if (!(out.tau > 0.0) || !(out.tau < 1.0) || !(out.gamma >= 0.0) || out.gamma >= 1.0)
    throw ConfigError("ValueTables::from_json: tau/gamma out of range");
  return out;
}

}  // namespace alignrl
