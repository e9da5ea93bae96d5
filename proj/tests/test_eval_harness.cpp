#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "alignrl/eval_harness.hpp"

using namespace alignrl;

namespace {

// Small, fast pipeline config: 3x3 world, single far-corner goal.
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.name = "gridworld-3x3-test";
  c.world.width = 3;
  c.world.height = 3;
  c.world.goal_cells = {8};
  c.world.slip_prob = 0.1;
  c.world.epsilon = 0.5;
  c.n_transitions = 600;
  c.max_episode_len = 30;
  c.seed = 5;
  WeightSpec spec;
  spec.method = Method::align_hard;
  c.methods.push_back(spec);
  return c;
}

}  // namespace

TEST_CASE("parallel_for fills every slot regardless of thread count") {
  std::vector<int> out(100, -1);
  parallel_for(100, 8, [&](int i) { out[i] = i * i; });
  for (int i = 0; i < 100; ++i) CHECK(out[i] == i * i);
  std::vector<int> seq(10, -1);
  parallel_for(10, 1, [&](int i) { seq[i] = i; });
  for (int i = 0; i < 10; ++i) CHECK(seq[i] == i);
}

TEST_CASE("parallel_for propagates worker exceptions") {
  std::atomic<int> done{0};
  CHECK_THROWS_AS(parallel_for(16, 4,
                               [&](int i) {
                                 if (i == 7) throw ConfigError("boom at 7");
                                 done.fetch_add(1);
                               }),
                  ConfigError);
  CHECK(done.load() >= 1);
}

TEST_CASE("behavior policy interpolates uniform and optimal") {
  const Mdp mdp = build_gridworld(3, 3, {8}, -1.0, 10.0, 0.0, 0.95);
  const TabularPolicy uniform_pi = behavior_policy(mdp, 1.0);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      CHECK(uniform_pi.prob(s, a) == doctest::Approx(0.25));
  const TabularPolicy greedy_pi = behavior_policy(mdp, 0.0);
  const TabularPolicy expected_greedy = greedy_policy(optimal_q_values(mdp));
  CHECK(greedy_pi.probs == expected_greedy.probs);
  const TabularPolicy mixed_pi = behavior_policy(mdp, 0.4);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      CHECK(mixed_pi.prob(s, a) ==
            doctest::Approx(0.4 * 0.25 + 0.6 * expected_greedy.prob(s, a)));
  CHECK(policy_return(mdp, mixed_pi) <= policy_return(mdp, expected_greedy) + 1e-12);
}

TEST_CASE("alignment residual is exact for point masses and NaN off-dataset") {
  // Hand-built tables: state 0 supported on both actions, state 1 unvisited.
  BehaviorModel b;
  b.probs = TabularPolicy::uniform(2, 2);
  b.support_counts = {3, 5, 0, 0};
  ValueTables t;
  t.q = QTable(2, 2, std::numeric_limits<double>::quiet_NaN());
  t.q(0, 0) = 1.0;
  t.q(0, 1) = 4.0;
  t.v = {2.0, 0.0};
  t.support = {1, 1, 0, 0};

  ExtractedPolicy point;
  point.probs = TabularPolicy::uniform(2, 2);
  point.probs.prob(0, 0) = 0.0;
  point.probs.prob(0, 1) = 1.0;
  const auto res = alignment_residual(point, t);
  REQUIRE(res.size() == 2);
  CHECK(res[0] == doctest::Approx(std::abs(4.0 - 2.0)).epsilon(1e-15));
  CHECK(std::isnan(res[1]));

  ExtractedPolicy bad;
  bad.probs = TabularPolicy::uniform(3, 2);
  CHECK_THROWS_AS(alignment_residual(bad, t), ConfigError);
}

TEST_CASE("behavior rows are aligned under the tau one-half critic") {
  auto cfg = small_config();
  cfg.critic.tau = 0.5;
  const Mdp mdp = build_gridworld(3, 3, {8}, -1.0, 10.0, 0.1, cfg.critic.gamma);
  const TabularPolicy mu = behavior_policy(mdp, 0.5);
  const auto data = generate_dataset(mdp, mu, 600, 30, 5);
  const auto b = estimate_behavior(data, mdp.n_states, mdp.n_actions, 0.0);
  const auto values = train_critic(data, b, cfg.critic);
  // At tau = 0.5 the state value is the behavior-weighted mean of Q, so the
  // behavior policy itself is aligned.
  ExtractedPolicy as_policy;
  as_policy.probs = b.probs;
  for (const double r : alignment_residual(as_policy, values))
    if (!std::isnan(r)) CHECK(r < 1e-4);
}

TEST_CASE("awr with vanishing temperature reproduces the estimated behavior return") {
  auto cfg = small_config();
  cfg.methods.clear();
  WeightSpec spec;
  spec.method = Method::awr;
  spec.awr_alpha = 1e-12;
  cfg.methods.push_back(spec);
  const ResultRecord rec = run_experiment(cfg);

  const Mdp mdp = build_gridworld(3, 3, {8}, -1.0, 10.0, 0.1, cfg.critic.gamma);
  const TabularPolicy mu = behavior_policy(mdp, 0.5);
  const auto data = generate_dataset(mdp, mu, 600, 30, 5);
  const auto b = estimate_behavior(data, mdp.n_states, mdp.n_actions, 0.0);
  CHECK(rec.runs[0].methods[0].policy_return ==
        doctest::Approx(policy_return(mdp, b.probs)).epsilon(1e-6));
}

TEST_CASE("run_experiment is deterministic and labels duplicate methods") {
  auto cfg = small_config();
  WeightSpec soft;
  soft.method = Method::align_soft;
  soft.eta = 1.0;
  cfg.methods.push_back(soft);
  soft.eta = 5.0;
  cfg.methods.push_back(soft);
  const ResultRecord a = run_experiment(cfg);
  const ResultRecord b = run_experiment(cfg);
  CHECK(a.to_json(false).dump() == b.to_json(false).dump());
  CHECK(a.to_csv() == b.to_csv());
  REQUIRE(a.runs.size() == 1);
  REQUIRE(a.runs[0].methods.size() == 3);
  CHECK(a.runs[0].methods[0].label == "align_hard");
  CHECK(a.runs[0].methods[1].label == "align_soft");
  CHECK(a.runs[0].methods[2].label == "align_soft#2");
  CHECK(a.config_digest == config_hash(cfg));
  CHECK(a.runs[0].optimal_return >= a.runs[0].behavior_return);
}

TEST_CASE("kl-to-hard diagnostics cover every visited state") {
  auto cfg = small_config();
  cfg.methods.clear();
  WeightSpec spec;
  spec.method = Method::awr;  // no align_hard in the list -> internal reference
  cfg.methods.push_back(spec);
  const ResultRecord rec = run_experiment(cfg);
  const MethodResult& m = rec.runs[0].methods[0];
  CHECK(m.kl_finite_states > 0);
  CHECK(m.kl_to_hard_mean >= 0.0);
  CHECK(m.kl_to_hard_max >= m.kl_to_hard_mean);
  CHECK(m.beta_negative + m.beta_zero + m.beta_positive == 0);  // awr solves nothing
}

TEST_CASE("stage failures carry the stage name") {
  auto cfg = small_config();
  cfg.world.goal_cells = {0, 1, 2, 3, 4, 5, 6, 7, 8};  // no start states remain
  try {
    run_experiment(cfg);
    FAIL("expected a stage error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("build_gridworld: ") == 0);
  }
}

TEST_CASE("robustness sweep requires corruption configs") {
  const auto cfg = small_config();
  CHECK_THROWS_AS(robustness_sweep(cfg), ConfigError);
}

TEST_CASE("zero-rate corruption rows equal the clean run") {
  auto cfg = small_config();
  CorruptionConfig c;
  c.kind = AttackKind::reward;
  c.rate = 0.0;
  c.seed = cfg.seed;
  cfg.corruptions = {c, c};
  const ResultRecord rec = robustness_sweep(cfg);
  REQUIRE(rec.runs.size() == 4);  // clean, two no-op attacks, average
  const auto clean = rec.runs[0].to_json()["methods"];
  CHECK(rec.runs[1].to_json()["methods"] == clean);
  CHECK(rec.runs[2].to_json()["methods"] == clean);
  // Averaging identical runs reproduces them.
  CHECK(rec.runs[3].label == "average");
  CHECK(rec.runs[3].to_json()["methods"] == clean);
}

TEST_CASE("benchmark sweep emits the full grid, stable across thread counts") {
  ExperimentConfig cfg = benchmark_config();
  CHECK(cfg.name == "gridworld-5x5-mixed-v1");
  CHECK_NOTHROW(cfg.validate());
  REQUIRE(cfg.methods.size() == 5);
  REQUIRE(cfg.corruptions.size() == 5);

  const ResultRecord one = robustness_sweep(cfg);
  cfg.threads = 4;
  const ResultRecord four = robustness_sweep(cfg);
  CHECK(one.to_json(false).dump() == four.to_json(false).dump());
  CHECK(one.to_csv() == four.to_csv());

  REQUIRE(one.runs.size() == 7);  // clean + five attacks + average
  CHECK(one.runs[0].label == "clean");
  CHECK(one.runs[3].label == "reward:0.50:0.50");
  CHECK(one.runs[6].label == "average");
  for (const auto& run : one.runs) CHECK(run.methods.size() == 5);

  // Header plus 7 runs x 5 methods, one row each.
  const std::string csv = one.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 7 * 5);
  CHECK(csv.find("reward:0.50:0.50,awr") != std::string::npos);

  // The alignment-residual ordering that motivates the hard method.
  const auto& clean = one.runs[0];
  CHECK(clean.methods[0].max_alignment_residual <=
        clean.methods[1].max_alignment_residual);
  CHECK(clean.methods[1].max_alignment_residual <=
        clean.methods[2].max_alignment_residual);
}

TEST_CASE("extraction never mutates the critic tables") {
  auto cfg = small_config();
  const Mdp mdp = build_gridworld(3, 3, {8}, -1.0, 10.0, 0.1, cfg.critic.gamma);
  const TabularPolicy mu = behavior_policy(mdp, 0.5);
  const auto data = generate_dataset(mdp, mu, 600, 30, 5);
  const auto b = estimate_behavior(data, mdp.n_states, mdp.n_actions, 0.0);
  const auto values = train_critic(data, b, cfg.critic);
  const std::string before = values.to_json().dump();
  WeightSpec spec;
  spec.method = Method::align_hard;
  (void)extract_policy_full(b, values, spec);
  spec.method = Method::mixed;
  (void)extract_policy_full(b, values, spec);
  CHECK(values.to_json().dump() == before);
}

TEST_CASE("config hash tracks parameters but not the thread knob") {
  ExperimentConfig cfg = small_config();
  const std::string h1 = config_hash(cfg);
  cfg.threads = 16;
  CHECK(config_hash(cfg) == h1);
  cfg.seed += 1;
  CHECK(config_hash(cfg) != h1);
}

TEST_CASE("suboptimality curve on the worked instance is finite and non-negative") {
  const std::vector<double> q{0.0, 1.0};
  const std::vector<double> mu{0.5, 0.5};
  const auto curve = suboptimality_curve(q, mu, 0.7, {0.5, 1.0, 3.0, 10.0});
  REQUIRE(curve.size() == 4);
  for (const auto& [eta, kl] : curve) {
    CHECK(std::isfinite(kl));
    CHECK(kl >= -1e-12);
  }
}

TEST_CASE("suboptimality curve vanishes on a symmetric instance") {
  // v equals the behavior mean, so both the hard and soft optima are mu.
  const std::vector<double> q{0.0, 1.0};
  const std::vector<double> mu{0.5, 0.5};
  const auto curve = suboptimality_curve(q, mu, 0.5, {0.5, 2.0, 8.0});
  REQUIRE(curve.size() == 3);
  for (const auto& [eta, kl] : curve) CHECK(std::abs(kl) < 1e-9);
}

TEST_CASE("suboptimality curve is omitted for infeasible hard instances") {
  const std::vector<double> q{0.0, 1.0};
  const std::vector<double> mu{0.5, 0.5};
  CHECK(suboptimality_curve(q, mu, 2.0, {1.0}).empty());
}

TEST_CASE("experiment config validation rejects bad fields") {
  auto cfg = small_config();
  cfg.n_transitions = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.world.epsilon = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.methods.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.threads = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
