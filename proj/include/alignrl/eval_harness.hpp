#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "alignrl/critic.hpp"
#include "alignrl/dataset.hpp"
#include "alignrl/extraction.hpp"
#include "alignrl/mdp.hpp"

namespace alignrl {

/// Gridworld and behavior-mixture description for one experiment. The
/// discount comes from the critic config so the world and the critic can
/// never disagree about it.
struct GridworldSpec {
  int width = 5;
  int height = 5;
  std::vector<int> goal_cells{24};
  double step_reward = -1.0;
  double goal_reward = 10.0;
  double slip_prob = 0.0;
  double epsilon = 0.5;  // behavior = epsilon*uniform + (1-epsilon)*optimal

  nlohmann::json to_json() const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  GridworldSpec world;
  int n_transitions = 4000;
  int max_episode_len = 40;
  double behavior_smoothing = 0.0;
  std::uint64_t seed = 1;
  CriticConfig critic;
  std::vector<WeightSpec> methods;
  std::vector<CorruptionConfig> corruptions;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Stable FNV-1a hex digest of the canonical config JSON.
std::string config_hash(const ExperimentConfig& config);

/// Everything measured about one extracted policy. kl_to_hard_* compare the
/// method's rows against the run's hard-extraction reference policy over
/// visited states (support violations count as infinite, not as errors).
struct MethodResult {
  std::string label;
  double policy_return = 0.0;
  double mean_alignment_residual = 0.0;  // over visited states
  double max_alignment_residual = 0.0;
  int fallback_count = 0;
  int beta_negative = 0;  // sign histogram over converged multiplier states
  int beta_zero = 0;
  int beta_positive = 0;
  double kl_to_hard_mean = 0.0;  // over finite-KL visited states
  double kl_to_hard_max = 0.0;
  int kl_finite_states = 0;
  int kl_infinite_states = 0;

  nlohmann::json to_json() const;
};

/// One pipeline execution: dataset variant -> critic -> every method.
struct RunResult {
  std::string label;  // "clean", "<attack>:<rate>:<scale>", or "average"
  double behavior_return = 0.0;
  double optimal_return = 0.0;
  std::vector<MethodResult> methods;

  nlohmann::json to_json() const;
};

/// Full experiment output with provenance. Every number is reproducible from
/// config + seed; the timestamp is the only field excluded from determinism
/// comparisons. In the "average" run integer fields carry the rounded mean
/// across corruption runs.
struct ResultRecord {
  std::string name;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string timestamp;  // UTC, RFC 3339
  nlohmann::json config;
  std::vector<RunResult> runs;

  nlohmann::json to_json(bool include_timestamp = true) const;
  /// Flat table, one row per method x run, including the average run.
  std::string to_csv() const;
};

/// Per-state |E_pi[Q](s) - V(s)| over supported actions; NaN for states the
/// dataset never visited.
std::vector<double> alignment_residual(const ExtractedPolicy& policy,
                                       const ValueTables& values);

/// epsilon*uniform + (1-epsilon)*greedy(optimal Q).
TabularPolicy behavior_policy(const Mdp& mdp, double epsilon);

/// Clean pipeline: generate -> estimate behavior -> train critic -> extract
/// every method -> exact evaluation. Stage failures are rethrown with the
/// stage name prefixed. Deterministic given the config, independent of
/// threads.
ResultRecord run_experiment(const ExperimentConfig& config);

/// One clean run plus one run per corruption config on independently
/// corrupted copies of the same base dataset, then an "average" run over the
/// corruption runs. config.corruptions must be non-empty.
ResultRecord robustness_sweep(const ExperimentConfig& config);

/// KL(soft_eta || hard) per eta, both sides solved by the brute-force
/// oracles on the given state row. An infeasible hard instance yields an
/// empty curve instead of throwing.
std::vector<std::pair<double, double>> suboptimality_curve(
    std::span<const double> q_row, std::span<const double> mu_row, double v,
    const std::vector<double>& etas, const Regularizer& reg = Regularizer::log());

/// The pinned regression benchmark "gridworld-5x5-mixed-v1": a slippery 5x5
/// world with medium-quality behavior, all five methods, and all five attack
/// kinds at rate = scale = 0.5.
ExperimentConfig benchmark_config();

/// Run fn(0..n-1) across up to `threads` workers. Callers must write results
/// into preallocated per-index slots; aggregation order then never depends on
/// the thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace alignrl
