#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "alignrl/multipliers.hpp"
#include "alignrl/oracle.hpp"
#include "alignrl/rng.hpp"

using namespace alignrl;

namespace {

// Two-action instance with a hand-derived solution: mu = (1/2, 1/2),
// q = (0, 1), v = 0.7 pins the optimum at pi = (0.3, 0.7) for every
// strictly convex regularizer, because the feasible set is a single point.
SimplexInstance worked_instance(Regularizer reg = Regularizer::log()) {
  SimplexInstance inst;
  inst.mu = {0.5, 0.5};
  inst.q = {0.0, 1.0};
  inst.v_target = 0.7;
  inst.reg = reg;
  return inst;
}

SimplexInstance random_instance(Rng& rng, int n, Regularizer reg) {
  SimplexInstance inst;
  inst.reg = reg;
  inst.mu.resize(n);
  inst.q.resize(n);
  double total = 0.0;
  for (double& m : inst.mu) total += m = 0.05 + rng.uniform01();
  for (double& m : inst.mu) m /= total;
  for (double& qi : inst.q) qi = rng.uniform(-2.0, 2.0);
  // Pick a target strictly inside the hull so the hard problem is solvable.
  const double lo = *std::min_element(inst.q.begin(), inst.q.end());
  const double hi = *std::max_element(inst.q.begin(), inst.q.end());
  const double frac = 0.2 + 0.6 * rng.uniform01();
  inst.v_target = lo + frac * (hi - lo);
  return inst;
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total;
}

}  // namespace

TEST_CASE("simplex projection clamps, normalizes, and is idempotent") {
  const std::vector<double> x{0.2, -1.0, 1.4};
  const auto p = project_to_simplex(x);
  double sum = std::accumulate(p.begin(), p.end(), 0.0);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (const double v : p) CHECK(v >= 0.0);
  const auto p2 = project_to_simplex(p);
  CHECK(l1(p, p2) < 1e-12);
  // A point already on the simplex is untouched.
  const std::vector<double> on{0.25, 0.25, 0.5};
  CHECK(l1(project_to_simplex(on), on) < 1e-12);
  // All mass collapses to the largest coordinate when the gaps are big.
  const auto spike = project_to_simplex(std::vector<double>{10.0, 0.0, -3.0});
  CHECK(spike[0] == doctest::Approx(1.0));
  CHECK(spike[1] == doctest::Approx(0.0));
}

TEST_CASE("hard oracle reproduces the worked two-action instance") {
  for (const auto& reg : {Regularizer::log(), Regularizer::linear()}) {
    const auto inst = worked_instance(reg);
    const auto pi = oracle_ipf(inst);
    REQUIRE(pi.size() == 2);
    CHECK(pi[0] == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(pi[1] == doctest::Approx(0.7).epsilon(1e-9));
  }
}

TEST_CASE("hard oracle matches tilted closed form on random instances") {
  // For the log member the optimum is mu * exp(-1 - alpha - beta q) with
  // multipliers from the one-dimensional bisection; the oracle must agree.
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    const auto inst = random_instance(rng, n, Regularizer::log());
    const double beta = solve_beta_log(inst.q, inst.mu, inst.v_target, 1e-12);
    const double alpha = alpha_from_beta_log(inst.q, inst.mu, beta);
    std::vector<double> closed(n);
    for (int i = 0; i < n; ++i)
      closed[i] = inst.mu[i] * inst.reg.weight(alpha, beta, inst.q[i]);
    const auto pi = oracle_ipf(inst);
    CHECK(l1(pi, closed) < 1e-6);
  }
}

TEST_CASE("hard oracle is feasible to machine precision") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = random_instance(rng, 4, Regularizer::linear());
    const auto pi = oracle_ipf(inst);
    double sum = 0.0, align = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
      CHECK(pi[i] >= 0.0);
      sum += pi[i];
      align += pi[i] * inst.q[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-10);
    CHECK(std::abs(align - inst.v_target) < 1e-10);
  }
}

TEST_CASE("hard oracle beats random feasible perturbations") {
  Rng rng(23);
  const auto inst = random_instance(rng, 3, Regularizer::log());
  const auto pi = oracle_ipf(inst);
  const double f_star = constrained_objective(inst, pi);
  // Feasible directions live in the null space of [1 1 1; q0 q1 q2].
  const double dir[3] = {inst.q[1] - inst.q[2], inst.q[2] - inst.q[0],
                         inst.q[0] - inst.q[1]};
  int tested = 0;
  for (int k = 0; k < 1000; ++k) {
    const double t = rng.uniform(-0.2, 0.2);
    std::vector<double> cand(3);
    bool ok = true;
    for (int i = 0; i < 3; ++i) {
      cand[i] = pi[i] + t * dir[i];
      ok = ok && cand[i] >= 0.0;
    }
    if (!ok) continue;
    ++tested;
    CHECK(constrained_objective(inst, cand) >= f_star - 1e-9);
  }
  CHECK(tested > 100);
}

TEST_CASE("restarts agree with each other") {
  Rng rng(31);
  const auto inst = random_instance(rng, 5, Regularizer::log());
  OracleOptions a;
  a.restarts = 1;
  OracleOptions b;
  b.restarts = 4;
  b.seed = 99;
  CHECK(l1(oracle_ipf(inst, a), oracle_ipf(inst, b)) < 1e-6);
}

TEST_CASE("infeasible targets raise") {
  auto inst = worked_instance();
  inst.v_target = 1.5;
  CHECK_THROWS_AS(oracle_ipf(inst), InfeasibleError);
  inst.v_target = -0.25;
  CHECK_THROWS_AS(oracle_ipf(inst), InfeasibleError);
}

TEST_CASE("instance validation rejects malformed inputs") {
  SimplexInstance inst;
  inst.mu = {0.5, 0.5};
  inst.q = {0.0};
  CHECK_THROWS_AS(inst.validate(), ConfigError);
  inst.q = {0.0, 1.0};
  inst.mu = {0.0, 1.0};
  CHECK_THROWS_AS(inst.validate(), ConfigError);
  inst.mu = {0.3, 0.3};
  CHECK_THROWS_AS(inst.validate(), ConfigError);
  inst.mu = {0.5, 0.5};
  inst.eta = -1.0;
  CHECK_THROWS_AS(inst.validate(), ConfigError);
}

TEST_CASE("soft oracle matches the exponential-tilt closed form") {
  // With the log regularizer and fixed v the soft optimum is
  // pi_i ~ mu_i * exp(-eta (q_i - v)^2), normalized.
  Rng rng(47);
  for (const double eta : {0.5, 3.0, 10.0}) {
    auto inst = random_instance(rng, 4, Regularizer::log());
    inst.eta = eta;
    std::vector<double> closed(4);
    double z = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double gap = inst.q[i] - inst.v_target;
      z += closed[i] = inst.mu[i] * std::exp(-eta * gap * gap);
    }
    for (double& c : closed) c /= z;
    const auto soft = oracle_ipf_soft(inst, VMode::fixed);
    CHECK(soft.v == inst.v_target);
    CHECK(l1(soft.pi, closed) < 1e-6);
  }
}

TEST_CASE("soft oracle with eta -> 0 returns the behavior row") {
  auto inst = worked_instance();
  inst.eta = 1e-9;
  const auto soft = oracle_ipf_soft(inst, VMode::fixed);
  CHECK(l1(soft.pi, inst.mu) < 1e-6);
}

TEST_CASE("joint v-mode reaches a self-consistent value") {
  Rng rng(53);
  auto inst = random_instance(rng, 4, Regularizer::log());
  inst.eta = 4.0;
  const auto soft = oracle_ipf_soft(inst, VMode::joint);
  double v = 0.0;
  for (std::size_t i = 0; i < soft.pi.size(); ++i) v += soft.pi[i] * inst.q[i];
  CHECK(std::abs(v - soft.v) < 1e-10);
  // The self-consistent objective cannot be worse than re-evaluating the
  // fixed-mode solution at its own induced v.
  const auto fixed = oracle_ipf_soft(inst, VMode::fixed);
  CHECK(soft_objective(inst, soft.pi, soft.v) <=
        soft_objective(inst, fixed.pi, soft.v) + 1e-8);
}

TEST_CASE("kkt check scores the closed-form solution as optimal") {
  const auto inst = worked_instance();
  const double beta = solve_beta_log(inst.q, inst.mu, inst.v_target, 1e-12);
  const double alpha = alpha_from_beta_log(inst.q, inst.mu, beta);
  std::vector<double> pi(2);
  for (int i = 0; i < 2; ++i)
    pi[i] = inst.mu[i] * inst.reg.weight(alpha, beta, inst.q[i]);
  const auto report = kkt_check(pi, inst.mu, inst.q, inst.v_target, alpha, beta, inst.reg);
  CHECK(report.max_residual() < 1e-10);
  CHECK(report.lambda.size() == 2);
  CHECK(report.lambda[0] == 0.0);
  CHECK(report.lambda[1] == 0.0);
}

TEST_CASE("kkt check flags a wrong candidate") {
  const auto inst = worked_instance();
  const std::vector<double> pi{0.5, 0.5};  // violates the alignment row
  const auto report = kkt_check(pi, inst.mu, inst.q, inst.v_target, -0.489, -0.847,
                                inst.reg);
  CHECK(report.primal_align > 0.1);
  CHECK(report.max_residual() > 0.1);
}

TEST_CASE("kkt report serializes every residual") {
  KktReport report;
  report.stationarity = 0.25;
  report.lambda = {0.0, 1.0};
  const auto j = report.to_json();
  CHECK(j.at("stationarity").get<double>() == 0.25);
  CHECK(j.at("lambda").size() == 2);
  CHECK(j.contains("primal_align"));
  CHECK(j.contains("complementary_slackness"));
  CHECK(j.contains("dual_feasibility"));
}

TEST_CASE("kl_rows handles zeros, support violations, and bad input") {
  const std::vector<double> p{0.3, 0.7, 0.0};
  const std::vector<double> q{0.5, 0.5, 0.0};
  const double kl = kl_rows(p, q);
  const double expected = 0.3 * std::log(0.3 / 0.5) + 0.7 * std::log(0.7 / 0.5);
  CHECK(kl == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kl_rows(p, p) == doctest::Approx(0.0));
  const std::vector<double> q_bad{1.0, 0.0, 0.0};
  CHECK(std::isinf(kl_rows(p, q_bad)));
  const std::vector<double> neg{-0.1, 1.1, 0.0};
  CHECK_THROWS_AS(kl_rows(neg, q), ConfigError);
  CHECK_THROWS_AS(kl_rows(p, std::vector<double>{0.5, 0.5}), ConfigError);
}

TEST_CASE("kl is non-negative between soft and hard oracle outputs") {
  Rng rng(61);
  const auto inst_base = random_instance(rng, 4, Regularizer::log());
  const auto hard = oracle_ipf(inst_base);
  for (const double eta : {0.5, 1.0, 3.0, 10.0}) {
    auto inst = inst_base;
    inst.eta = eta;
    const auto soft = oracle_ipf_soft(inst, VMode::fixed);
    const double kl = kl_rows(soft.pi, hard);
    CHECK(std::isfinite(kl));
    CHECK(kl >= -1e-12);
  }
}
