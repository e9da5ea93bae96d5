#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "alignrl/critic.hpp"
#include "alignrl/rng.hpp"

using namespace alignrl;

namespace {

/// One record per (s, a) pair of a deterministic MDP, including absorbing
/// rows, so the empirical behavior is exactly uniform.
TransitionDataset exhaustive_dataset(const Mdp& m, int copies = 1) {
  TransitionDataset data;
  data.n_states = m.n_states;
  data.n_actions = m.n_actions;
  for (int rep = 0; rep < copies; ++rep) {
    for (int s = 0; s < m.n_states; ++s) {
      for (int a = 0; a < m.n_actions; ++a) {
        const auto row = m.transition_row(s, a);
        int s_next = 0;
        for (int s2 = 1; s2 < m.n_states; ++s2)
          if (row[s2] > row[s_next]) s_next = s2;
        data.transitions.push_back({s, a, m.r(s, a), s_next, is_absorbing(m, s_next)});
      }
    }
  }
  return data;
}

double scan_expectile(const std::vector<double>& x, const std::vector<double>& w,
                      double tau, double step) {
  const double lo = *std::min_element(x.begin(), x.end());
  const double hi = *std::max_element(x.begin(), x.end());
  double best_v = lo, best_loss = std::numeric_limits<double>::infinity();
  for (double v = lo; v <= hi + step / 2; v += step) {
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) loss += w[i] * expectile_loss(x[i] - v, tau);
    if (loss < best_loss) {
      best_loss = loss;
      best_v = v;
    }
  }
  return best_v;
}

}  // namespace

TEST_CASE("expectile loss weighs the two sides by tau") {
  CHECK(expectile_loss(1.0, 0.9) == doctest::Approx(0.9));
  CHECK(expectile_loss(-1.0, 0.9) == doctest::Approx(0.1));
  CHECK(expectile_loss(2.0, 0.5) == doctest::Approx(2.0));
  CHECK(expectile_loss(-3.0, 0.5) == doctest::Approx(4.5));
  CHECK_THROWS_AS(expectile_loss(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(expectile_loss(1.0, 1.0), ConfigError);
}

TEST_CASE("state expectile matches a brute-force loss scan") {
  const std::vector<double> x{0.0, 1.0, 5.0};
  const std::vector<double> w{1.0, 1.0, 1.0};
  const double solved = solve_state_expectile(x, w, 0.9, 1e-12);
  CHECK(solved == doctest::Approx(46.0 / 11.0).epsilon(1e-9));
  CHECK(solved == doctest::Approx(scan_expectile(x, w, 0.9, 1e-6)).epsilon(1e-5));
}

TEST_CASE("state expectile special cases") {
  const std::vector<double> x{0.0, 10.0};
  const std::vector<double> w{3.0, 1.0};
  CHECK(solve_state_expectile(x, w, 0.5, 1e-12) == doctest::Approx(2.5));

  const std::vector<double> single{4.2};
  const std::vector<double> w1{2.0};
  CHECK(solve_state_expectile(single, w1, 0.37, 1e-12) == doctest::Approx(4.2));

  const std::vector<double> equal{1.5, 1.5, 1.5};
  const std::vector<double> w3{1.0, 2.0, 3.0};
  CHECK(solve_state_expectile(equal, w3, 0.9, 1e-12) == doctest::Approx(1.5));

  CHECK_THROWS_AS(solve_state_expectile({}, {}, 0.5, 1e-9), ConfigError);
  const std::vector<double> zero_w{0.0, 0.0};
  CHECK_THROWS_AS(solve_state_expectile(x, zero_w, 0.5, 1e-9), ConfigError);
}

TEST_CASE("state expectile: random instances agree with the scan and are stationary") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(5);
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
      x[i] = rng.uniform(-2.0, 2.0);
      w[i] = rng.uniform(0.1, 1.0);
    }
    const double tau = rng.uniform(0.05, 0.95);
    const double v = solve_state_expectile(x, w, tau, 1e-13);
    CHECK(std::abs(v - scan_expectile(x, w, tau, 1e-5)) < 1e-3);
    double grad = 0.0;
    for (int i = 0; i < n; ++i) {
      const double m = x[i] < v ? 1.0 - tau : tau;
      grad += w[i] * m * (v - x[i]);
    }
    CHECK(std::abs(grad) < 10 * 1e-13);
    CHECK(v >= *std::min_element(x.begin(), x.end()) - 1e-12);
    CHECK(v <= *std::max_element(x.begin(), x.end()) + 1e-12);
  }
}

TEST_CASE("state expectile is monotone in tau") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(4), w(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = rng.uniform(-1.0, 1.0);
      w[i] = rng.uniform(0.2, 1.0);
    }
    double prev = -std::numeric_limits<double>::infinity();
    for (const double tau : {0.5, 0.7, 0.9, 0.99}) {
      const double v = solve_state_expectile(x, w, tau, 1e-12);
      CHECK(v >= prev - 1e-10);
      prev = v;
    }
  }
}

TEST_CASE("single terminal record trains to its reward") {
  TransitionDataset data;
  data.transitions = {{0, 0, 1.0, 1, true}};
  const BehaviorModel behavior = estimate_behavior(data, 2, 1, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.7;
  cfg.gamma = 0.9;
  const ValueTables vt = train_critic(data, behavior, cfg);
  CHECK(vt.q(0, 0) == doctest::Approx(1.0));
  CHECK(vt.v[0] == doctest::Approx(1.0));
  CHECK(vt.supported(0, 0));
  CHECK_FALSE(vt.visited(1));
  CHECK(vt.v[1] == 0.0);
  CHECK(std::isnan(vt.q(1, 0)));
}

TEST_CASE("two-step chain bootstraps through the value table") {
  TransitionDataset data;
  data.transitions = {{0, 0, 0.0, 1, false}, {1, 0, 1.0, 2, true}};
  const BehaviorModel behavior = estimate_behavior(data, 3, 1, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.5;
  cfg.gamma = 0.9;
  const ValueTables vt = train_critic(data, behavior, cfg);
  CHECK(vt.q(1, 0) == doctest::Approx(1.0));
  CHECK(vt.v[1] == doctest::Approx(1.0));
  CHECK(vt.q(0, 0) == doctest::Approx(0.9));
  CHECK(vt.v[0] == doctest::Approx(0.9));
}

TEST_CASE("tau=0.5 critic on a fully covered deterministic grid equals DP") {
  const Mdp m = build_gridworld(5, 5, {24}, -0.01, 1.0, 0.0, 0.95);
  const TransitionDataset data = exhaustive_dataset(m);
  const BehaviorModel behavior = estimate_behavior(data, 25, 4, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.5;
  cfg.gamma = 0.95;
  const ValueTables vt = train_critic(data, behavior, cfg);
  const StateValueTable v_dp = exact_policy_evaluation(m, TabularPolicy::uniform(25, 4));
  for (int s = 0; s < 25; ++s)
    CHECK(vt.v[s] == doctest::Approx(v_dp[s]).epsilon(1e-6));
}

TEST_CASE("converged tables satisfy bounds and per-state hull invariants") {
  const Mdp m = build_gridworld(5, 5, {24}, -0.01, 1.0, 0.1, 0.95);
  const TransitionDataset data =
      generate_dataset(m, TabularPolicy::uniform(25, 4), 8000, 60, 13);
  const BehaviorModel behavior = estimate_behavior(data, 25, 4, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.9;
  cfg.gamma = 0.95;
  const ValueTables vt = train_critic(data, behavior, cfg);

  const double lo = -0.01 / (1 - 0.95), hi = 1.0 / (1 - 0.95);
  for (int s = 0; s < 25; ++s) {
    if (!vt.visited(s)) continue;
    double q_min = std::numeric_limits<double>::infinity(), q_max = -q_min;
    for (int a = 0; a < 4; ++a) {
      if (!vt.supported(s, a)) continue;
      CHECK(vt.q(s, a) >= lo - 1e-9);
      CHECK(vt.q(s, a) <= hi + 1e-9);
      q_min = std::min(q_min, vt.q(s, a));
      q_max = std::max(q_max, vt.q(s, a));
    }
    CHECK(vt.v[s] >= q_min - 1e-9);
    CHECK(vt.v[s] <= q_max + 1e-9);
  }
}

TEST_CASE("per-state expectiles of a fixed Q table are monotone across tau") {
  const Mdp m = build_gridworld(5, 5, {24}, -0.01, 1.0, 0.1, 0.95);
  const TransitionDataset data =
      generate_dataset(m, TabularPolicy::uniform(25, 4), 6000, 60, 29);
  const BehaviorModel behavior = estimate_behavior(data, 25, 4, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.7;
  cfg.gamma = 0.95;
  const ValueTables vt = train_critic(data, behavior, cfg);

  for (int s = 0; s < 25; ++s) {
    if (!vt.visited(s)) continue;
    std::vector<double> x, w;
    for (int a = 0; a < 4; ++a) {
      if (!vt.supported(s, a)) continue;
      x.push_back(vt.q(s, a));
      w.push_back(static_cast<double>(behavior.count(s, a)));
    }
    double prev = -std::numeric_limits<double>::infinity();
    for (const double tau : {0.5, 0.7, 0.9, 0.99}) {
      const double v = solve_state_expectile(x, w, tau, 1e-12);
      CHECK(v >= prev - 1e-10);
      prev = v;
    }
  }
}

TEST_CASE("polyak smoothing reaches the same fixed point") {
  const Mdp m = build_gridworld(4, 4, {15}, -0.02, 1.0, 0.0, 0.9);
  const TransitionDataset data = exhaustive_dataset(m);
  const BehaviorModel behavior = estimate_behavior(data, 16, 4, 0.0);
  CriticConfig plain;
  plain.tau = 0.7;
  plain.gamma = 0.9;
  CriticConfig damped = plain;
  damped.polyak = 0.5;
  const ValueTables a = train_critic(data, behavior, plain);
  const ValueTables b = train_critic(data, behavior, damped);
  for (int s = 0; s < 16; ++s) CHECK(a.v[s] == doctest::Approx(b.v[s]).epsilon(1e-6));
}

TEST_CASE("training is deterministic") {
  const Mdp m = build_gridworld(4, 4, {15}, -0.02, 1.0, 0.2, 0.9);
  const TransitionDataset data =
      generate_dataset(m, TabularPolicy::uniform(16, 4), 3000, 40, 8);
  const BehaviorModel behavior = estimate_behavior(data, 16, 4, 0.0);
  CriticConfig cfg;
  cfg.gamma = 0.9;
  const ValueTables a = train_critic(data, behavior, cfg);
  const ValueTables b = train_critic(data, behavior, cfg);
  CHECK(a.v == b.v);
  CHECK(a.q.values.size() == b.q.values.size());
  for (std::size_t i = 0; i < a.q.values.size(); ++i) {
    if (std::isnan(a.q.values[i]))
      CHECK(std::isnan(b.q.values[i]));
    else
      CHECK(a.q.values[i] == b.q.values[i]);
  }
}

TEST_CASE("sweep cap failure and config validation") {
  const Mdp m = build_gridworld(5, 5, {24}, -0.01, 1.0, 0.0, 0.95);
  const TransitionDataset data = exhaustive_dataset(m);
  const BehaviorModel behavior = estimate_behavior(data, 25, 4, 0.0);
  CriticConfig cfg;
  cfg.gamma = 0.95;
  cfg.max_sweeps = 1;
  CHECK_THROWS_AS(train_critic(data, behavior, cfg), NumericError);

  CriticConfig bad;
  bad.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CriticConfig{};
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CriticConfig{};
  bad.polyak = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CriticConfig{};
  bad.tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  // Behavior counts must describe the same dataset.
  TransitionDataset other = data;
  other.transitions.pop_back();
  const BehaviorModel stale = estimate_behavior(other, 25, 4, 0.0);
  CriticConfig ok;
  ok.gamma = 0.95;
  CHECK_THROWS_AS(train_critic(data, stale, ok), ConfigError);
}

TEST_CASE("value tables serialize losslessly including unsupported entries") {
  TransitionDataset data;
  data.transitions = {{0, 1, 0.5, 1, false}, {1, 0, 1.0, 2, true}};
  const BehaviorModel behavior = estimate_behavior(data, 3, 2, 0.0);
  CriticConfig cfg;
  cfg.tau = 0.6;
  cfg.gamma = 0.8;
  const ValueTables vt = train_critic(data, behavior, cfg);
  const nlohmann::json j = vt.to_json();
  CHECK(j.at("q").at(0).at(0).is_null());  // (0,0) never visited
  const ValueTables back = ValueTables::from_json(j);
  CHECK(back.tau == vt.tau);
  CHECK(back.gamma == vt.gamma);
  CHECK(back.v == vt.v);
  CHECK(back.support == vt.support);
  CHECK(back.q(0, 1) == vt.q(0, 1));
  CHECK(std::isnan(back.q(0, 0)));
  CHECK(back.to_json().dump() == j.dump());

  nlohmann::json broken = j;
  broken["support_mask"][0][0] = 2;
  CHECK_THROWS_AS(ValueTables::from_json(broken), ConfigError);
}
