#include "alignrl/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "alignrl/rng.hpp"

namespace alignrl {

std::string to_string(Method method) {
  switch (method) {
    case Method::awr: return "awr";
    case Method::align_soft: return "align_soft";
    case Method::align_hard: return "align_hard";
    case Method::idql_expectile: return "idql_expectile";
    case Method::mixed: return "mixed";
  }
  throw ConfigError("to_string: unknown Method value");
}

Method method_from_string(const std::string& name) {
  if (name == "awr") return Method::awr;
  if (name == "align_soft" || name == "align-soft") return Method::align_soft;
  if (name == "align_hard" || name == "align-hard") return Method::align_hard;
  if (name == "idql_expectile" || name == "idql") return Method::idql_expectile;
  if (name == "mixed") return Method::mixed;
  throw ConfigError("unknown extraction method: " + name);
}

std::string to_string(ExponentSign sign) {
  return sign == ExponentSign::negative ? "negative" : "positive";
}

ExponentSign exponent_sign_from_string(const std::string& name) {
  if (name == "negative" || name == "neg") return ExponentSign::negative;
  if (name == "positive" || name == "pos") return ExponentSign::positive;
  throw ConfigError("unknown exponent sign: " + name);
}

void WeightSpec::validate() const {
  if (!(eta > 0.0)) throw ConfigError("WeightSpec: eta must be positive");
  if (!(awr_alpha > 0.0)) throw ConfigError("WeightSpec: awr_alpha must be positive");
  if (!(kappa >= 0.0)) throw ConfigError("WeightSpec: kappa must be non-negative");
  if (!(tau > 0.0 && tau < 1.0))
    throw ConfigError("WeightSpec: tau must lie in (0, 1)");
  if (!(weight_floor >= 0.0))
    throw ConfigError("WeightSpec: weight_floor must be non-negative");
  if (!(weight_cap > 0.0)) throw ConfigError("WeightSpec: weight_cap must be positive");
  if (!(weight_floor < weight_cap))
    throw ConfigError("WeightSpec: weight_floor must be below weight_cap");
  if (!(hard_tol > 0.0)) throw ConfigError("WeightSpec: hard_tol must be positive");
}

nlohmann::json WeightSpec::to_json() const {
  return nlohmann::json{{"method", to_string(method)},
                        {"regularizer", regularizer.name()},
                        {"eta", eta},
                        {"awr_alpha", awr_alpha},
                        {"kappa", kappa},
                        {"tau", tau},
                        {"weight_floor", weight_floor},
                        {"weight_cap", weight_cap},
                        {"exponent_sign", to_string(exponent_sign)},
                        {"hard_tol", hard_tol}};
}

WeightSpec WeightSpec::from_json(const nlohmann::json& j) {
  WeightSpec spec;
  spec.method = method_from_string(j.at("method").get<std::string>());
  spec.regularizer = Regularizer::from_string(j.at("regularizer").get<std::string>());
  spec.eta = j.at("eta").get<double>();
  spec.awr_alpha = j.at("awr_alpha").get<double>();
  spec.kappa = j.at("kappa").get<double>();
  spec.tau = j.at("tau").get<double>();
  spec.weight_floor = j.at("weight_floor").get<double>();
  spec.weight_cap = j.at("weight_cap").get<double>();
  spec.exponent_sign =
      exponent_sign_from_string(j.at("exponent_sign").get<std::string>());
  spec.hard_tol = j.at("hard_tol").get<double>();
  spec.validate();
  return spec;
}

namespace {
constexpr double kExpClamp = 700.0;  // exp stays finite below this exponent
}

double weight_awr(double q, double v, double awr_alpha, double cap) {
  const double w = std::exp(std::min(awr_alpha * (q - v), kExpClamp));
  return std::min(w, cap);
}

double weight_align_soft(double q, double v, double eta, ExponentSign sign,
                         double floor_value) {
  const double gap = q - v;
  const double sigma = sign == ExponentSign::negative ? -1.0 : 1.0;
  const double w = std::exp(std::min(sigma * eta * gap * gap, kExpClamp));
  return std::max(w, floor_value);
}

double weight_idql_expectile(double q, double v, double tau) {
  return q >= v ? tau : 1.0 - tau;
}

double mix_weights(double w_align, double w_awr, double kappa) {
  return w_align + kappa * w_awr;
}

std::vector<double> weight_align_hard(std::span<const double> q_row,
                                      const Regularizer& reg, double alpha,
                                      double beta) {
  std::vector<double> w(q_row.size());
  for (std::size_t i = 0; i < q_row.size(); ++i)
    w[i] = reg.weight(alpha, beta, q_row[i]);
  return w;
}

ExtractedPolicy extract_policy_full(const BehaviorModel& behavior,
                                    const ValueTables& values,
                                    const WeightSpec& spec) {
  spec.validate();
  const int ns = values.q.n_states;
  const int na = values.q.n_actions;
  if (behavior.probs.n_states != ns || behavior.probs.n_actions != na)
    throw ConfigError("extract_policy_full: behavior covers " +
                      std::to_string(behavior.probs.n_states) + "x" +
                      std::to_string(behavior.probs.n_actions) +
                      " but values cover " + std::to_string(ns) + "x" +
                      std::to_string(na));

  ExtractedPolicy out;
  out.method_provenance = spec;
  out.probs = TabularPolicy::uniform(ns, na);
  out.per_state_weights = QTable(ns, na, 0.0);
  if (spec.method == Method::align_hard) out.multipliers.rows.resize(ns);

  std::vector<int> sup;
  std::vector<double> mu_sup, q_sup, w_sup;
  for (int s = 0; s < ns; ++s) {
    sup.clear();
    for (int a = 0; a < na; ++a)
      if (behavior.supported(s, a)) sup.push_back(a);
    if (sup.empty()) {
      // Never visited: no support information, keep the uniform behavior row.
      if (spec.method == Method::align_hard) {
        auto& row = out.multipliers.rows[s];
        row.alpha = row.beta = std::numeric_limits<double>::quiet_NaN();
        row.status = SolveStatus::infeasible;
      }
      continue;
    }

    mu_sup.clear();
    q_sup.clear();
    double mu_total = 0.0;
    for (const int a : sup) {
      mu_total += behavior.probs.prob(s, a);
      mu_sup.push_back(behavior.probs.prob(s, a));
      q_sup.push_back(values.q(s, a));
    }
    for (double& m : mu_sup) m /= mu_total;  // smoothing may shave mass off support
    const double v = values.v[s];

    w_sup.assign(sup.size(), 0.0);
    bool fell_back = false;
    switch (spec.method) {
      case Method::awr:
        for (std::size_t i = 0; i < sup.size(); ++i)
          w_sup[i] = weight_awr(q_sup[i], v, spec.awr_alpha, spec.weight_cap);
        break;
      case Method::align_soft:
        for (std::size_t i = 0; i < sup.size(); ++i)
          w_sup[i] = weight_align_soft(q_sup[i], v, spec.eta, spec.exponent_sign,
                                       spec.weight_floor);
        break;
      case Method::idql_expectile:
        for (std::size_t i = 0; i < sup.size(); ++i)
          w_sup[i] = weight_idql_expectile(q_sup[i], v, spec.tau);
        break;
      case Method::mixed:
        for (std::size_t i = 0; i < sup.size(); ++i)
          w_sup[i] = mix_weights(
              weight_align_soft(q_sup[i], v, spec.eta, spec.exponent_sign,
                                spec.weight_floor),
              weight_awr(q_sup[i], v, spec.awr_alpha, spec.weight_cap), spec.kappa);
        break;
      case Method::align_hard: {
        const StateMultipliers sol = solve_state_multipliers(
            q_sup, mu_sup, v, spec.regularizer, spec.hard_tol);
        out.multipliers.rows[s] = sol;
        if (sol.status == SolveStatus::converged) {
          w_sup = weight_align_hard(q_sup, spec.regularizer, sol.alpha, sol.beta);
        } else {
          fell_back = true;
          for (std::size_t i = 0; i < sup.size(); ++i)
            w_sup[i] = weight_align_soft(q_sup[i], v, spec.eta, spec.exponent_sign,
                                         spec.weight_floor);
        }
        break;
      }
    }
    if (fell_back) out.fallback_states.push_back(s);

    double z = 0.0;
    for (std::size_t i = 0; i < sup.size(); ++i) z += mu_sup[i] * w_sup[i];
    if (!(z > 0.0))
      throw DegenerateStateError("state " + std::to_string(s) +
                                 ": every supported action has zero weight");
    for (int a = 0; a < na; ++a) out.probs.prob(s, a) = 0.0;
    for (std::size_t i = 0; i < sup.size(); ++i) {
      out.probs.prob(s, sup[i]) = mu_sup[i] * w_sup[i] / z;
      out.per_state_weights(s, sup[i]) = w_sup[i];
    }
  }
  return out;
}

int extract_action_sampled(std::span<const double> behavior_row,
                           const std::function<double(int)>& weight_fn,
                           int n_samples, std::uint64_t seed) {
  if (behavior_row.empty())
    throw ConfigError("extract_action_sampled: empty behavior row");
  if (n_samples < 1)
    throw ConfigError("extract_action_sampled: n_samples must be at least 1");
  Rng rng(substream_seed(seed, "extraction-sampling"));
  int best = -1;
  double best_w = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_samples; ++k) {
    const int a = rng.categorical(behavior_row);
    const double w = weight_fn(a);
    // Normalizing by the batch total preserves this ordering, so compare raw.
    if (best < 0 || w > best_w || (w == best_w && a < best)) {
      best_w = w;
      best = a;
    }
  }
  return best;
}

nlohmann::json ExtractedPolicy::to_json() const {
  nlohmann::json weights = nlohmann::json::array();
  for (int s = 0; s < per_state_weights.n_states; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < per_state_weights.n_actions; ++a)
      row.push_back(per_state_weights(s, a));
    weights.push_back(std::move(row));
  }
  return nlohmann::json{{"probs", probs.to_json()},
                        {"per_state_weights", std::move(weights)},
                        {"spec", method_provenance.to_json()},
                        {"fallback_states", fallback_states},
                        {"multipliers", multipliers.to_json()}};
}

ExtractedPolicy ExtractedPolicy::from_json(const nlohmann::json& j) {
  ExtractedPolicy out;
  out.probs = TabularPolicy::from_json(j.at("probs"));
  const auto& weights = j.at("per_state_weights");
  out.per_state_weights = QTable(out.probs.n_states, out.probs.n_actions, 0.0);
  if (static_cast<int>(weights.size()) != out.probs.n_states)
    throw ConfigError("ExtractedPolicy: weight table has wrong state count");
  for (int s = 0; s < out.probs.n_states; ++s) {
    const auto& row = weights.at(s);
    if (static_cast<int>(row.size()) != out.probs.n_actions)
      throw ConfigError("ExtractedPolicy: weight row has wrong action count");
    for (int a = 0; a < out.probs.n_actions; ++a)
      out.per_state_weights(s, a) = row.at(a).get<double>();
  }
  out.method_provenance = WeightSpec::from_json(j.at("spec"));
  out.fallback_states = j.at("fallback_states").get<std::vector<int>>();
  out.multipliers = MultiplierTable::from_json(j.at("multipliers"));
  return out;
}

}  // namespace alignrl
