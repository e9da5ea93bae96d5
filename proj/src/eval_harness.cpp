#include "alignrl/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "alignrl/oracle.hpp"

namespace alignrl {

nlohmann::json GridworldSpec::to_json() const {
  return nlohmann::json{{"width", width},
                        {"height", height},
                        {"goal_cells", goal_cells},
                        {"step_reward", step_reward},
                        {"goal_reward", goal_reward},
                        {"slip_prob", slip_prob},
                        {"epsilon", epsilon}};
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("ExperimentConfig: name must not be empty");
  if (world.width < 1 || world.height < 1)
    throw ConfigError("ExperimentConfig: grid must be at least 1x1");
  if (world.goal_cells.empty())
    throw ConfigError("ExperimentConfig: at least one goal cell is required");
  if (!(world.slip_prob >= 0.0 && world.slip_prob <= 1.0))
    throw ConfigError("ExperimentConfig: slip_prob must lie in [0, 1]");
  if (!(world.epsilon >= 0.0 && world.epsilon <= 1.0))
    throw ConfigError("ExperimentConfig: epsilon must lie in [0, 1]");
  if (n_transitions < 1)
    throw ConfigError("ExperimentConfig: n_transitions must be >= 1");
  if (max_episode_len < 1)
    throw ConfigError("ExperimentConfig: max_episode_len must be >= 1");
  if (!(behavior_smoothing >= 0.0))
    throw ConfigError("ExperimentConfig: behavior_smoothing must be non-negative");
  if (threads < 1) throw ConfigError("ExperimentConfig: threads must be >= 1");
  critic.validate();
  if (methods.empty())
    throw ConfigError("ExperimentConfig: at least one extraction method is required");
  for (const auto& m : methods) m.validate();
  for (const auto& c : corruptions) c.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json method_list = nlohmann::json::array();
  for (const auto& m : methods) method_list.push_back(m.to_json());
  nlohmann::json corruption_list = nlohmann::json::array();
  for (const auto& c : corruptions)
    corruption_list.push_back(nlohmann::json{{"kind", to_string(c.kind)},
                                             {"rate", c.rate},
                                             {"scale", c.scale},
                                             {"seed", c.seed}});
  // threads is an execution knob, not an experiment parameter: leaving it out
  // keeps the config hash identical across thread counts.
  return nlohmann::json{{"name", name},
                        {"world", world.to_json()},
                        {"n_transitions", n_transitions},
                        {"max_episode_len", max_episode_len},
                        {"behavior_smoothing", behavior_smoothing},
                        {"seed", seed},
                        {"critic",
                         {{"tau", critic.tau},
                          {"gamma", critic.gamma},
                          {"max_sweeps", critic.max_sweeps},
                          {"tol", critic.tol},
                          {"polyak", critic.polyak}}},
                        {"methods", std::move(method_list)},
                        {"corruptions", std::move(corruption_list)}};
}

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  std::tm g{};
  gmtime_r(&t, &g);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &g);
  return buf;
}

template <typename F>
auto with_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(stage + ": " + e.what());
  } catch (const DegenerateStateError& e) {
    throw DegenerateStateError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

}  // namespace

std::string config_hash(const ExperimentConfig& config) {
  return fnv1a_hex(config.to_json().dump());
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::min(threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

TabularPolicy behavior_policy(const Mdp& mdp, double epsilon) {
  const TabularPolicy uniform = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
  const TabularPolicy greedy = greedy_policy(optimal_q_values(mdp));
  return mix_policies(uniform, greedy, epsilon);
}

std::vector<double> alignment_residual(const ExtractedPolicy& policy,
                                       const ValueTables& values) {
  const int ns = values.q.n_states;
  const int na = values.q.n_actions;
  if (policy.probs.n_states != ns || policy.probs.n_actions != na)
    throw ConfigError("alignment_residual: policy and values shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(ns),
                          std::numeric_limits<double>::quiet_NaN());
  for (int s = 0; s < ns; ++s) {
    if (!values.visited(s)) continue;
    double mean_q = 0.0;
    for (int a = 0; a < na; ++a)
      if (values.supported(s, a)) mean_q += policy.probs.prob(s, a) * values.q(s, a);
    out[static_cast<std::size_t>(s)] = std::abs(mean_q - values.v[s]);
  }
  return out;
}

namespace {

MethodResult evaluate_method(const Mdp& mdp, const ValueTables& values,
                             const ExtractedPolicy& extracted,
                             const TabularPolicy& hard_reference,
                             std::string label) {
  MethodResult r;
  r.label = std::move(label);
  r.policy_return = policy_return(mdp, extracted.probs);
  r.fallback_count = static_cast<int>(extracted.fallback_states.size());

  const auto residuals = alignment_residual(extracted, values);
  int visited = 0;
  double total = 0.0;
  for (const double res : residuals) {
    if (std::isnan(res)) continue;
    ++visited;
    total += res;
    r.max_alignment_residual = std::max(r.max_alignment_residual, res);
  }
  r.mean_alignment_residual = visited > 0 ? total / visited : 0.0;

  for (const auto& row : extracted.multipliers.rows) {
    if (row.status != SolveStatus::converged) continue;
    if (row.beta < -1e-12)
      ++r.beta_negative;
    else if (row.beta > 1e-12)
      ++r.beta_positive;
    else
      ++r.beta_zero;
  }

  double kl_total = 0.0;
  for (int s = 0; s < values.q.n_states; ++s) {
    if (!values.visited(s)) continue;
    const double kl = kl_rows(extracted.probs.row(s), hard_reference.row(s));
    if (std::isfinite(kl)) {
      ++r.kl_finite_states;
      kl_total += kl;
      r.kl_to_hard_max = std::max(r.kl_to_hard_max, kl);
    } else {
      ++r.kl_infinite_states;
    }
  }
  r.kl_to_hard_mean = r.kl_finite_states > 0 ? kl_total / r.kl_finite_states : 0.0;
  return r;
}

RunResult run_pipeline(const Mdp& mdp, const TransitionDataset& data,
                       const ExperimentConfig& config, std::string label,
                       double behavior_return, double optimal_return,
                       int threads) {
  RunResult run;
  run.label = std::move(label);
  run.behavior_return = behavior_return;
  run.optimal_return = optimal_return;

  const BehaviorModel behavior = with_stage("estimate_behavior", [&] {
    return estimate_behavior(data, mdp.n_states, mdp.n_actions,
                             config.behavior_smoothing);
  });
  const ValueTables values =
      with_stage("train_critic", [&] { return train_critic(data, behavior, config.critic); });

  // Duplicate method names get an occurrence suffix so rows stay unique.
  const int n = static_cast<int>(config.methods.size());
  std::vector<std::string> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::string base = to_string(config.methods[i].method);
    int occurrence = 1;
    for (int j = 0; j < i; ++j)
      if (config.methods[j].method == config.methods[i].method) ++occurrence;
    labels[i] = occurrence == 1 ? base : base + "#" + std::to_string(occurrence);
  }

  std::vector<ExtractedPolicy> extracted(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](int i) {
    extracted[static_cast<std::size_t>(i)] = with_stage("extract " + labels[i], [&] {
      return extract_policy_full(behavior, values, config.methods[i]);
    });
  });

  int hard_index = -1;
  for (int i = 0; i < n; ++i)
    if (config.methods[i].method == Method::align_hard) {
      hard_index = i;
      break;
    }
  ExtractedPolicy hard_reference;
  if (hard_index < 0) {
    WeightSpec hard_spec;  // defaults to align_hard with the log member
    hard_reference = with_stage("extract align_hard reference", [&] {
      return extract_policy_full(behavior, values, hard_spec);
    });
  }
  const TabularPolicy& reference_probs =
      hard_index >= 0 ? extracted[static_cast<std::size_t>(hard_index)].probs
                      : hard_reference.probs;

  run.methods.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    run.methods.push_back(with_stage("evaluate " + labels[i], [&] {
      return evaluate_method(mdp, values, extracted[static_cast<std::size_t>(i)],
                             reference_probs, labels[i]);
    }));
  return run;
}

std::string corruption_label(const CorruptionConfig& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%.2f:%.2f", to_string(c.kind).c_str(), c.rate,
                c.scale);
  return buf;
}

RunResult average_run(const std::vector<RunResult>& corrupted_runs) {
  RunResult avg;
  avg.label = "average";
  if (corrupted_runs.empty()) return avg;
  const double denom = static_cast<double>(corrupted_runs.size());
  const std::size_t n_methods = corrupted_runs.front().methods.size();
  avg.methods.resize(n_methods);
  for (const auto& run : corrupted_runs) {
    avg.behavior_return += run.behavior_return / denom;
    avg.optimal_return += run.optimal_return / denom;
    for (std::size_t j = 0; j < n_methods; ++j) {
      const auto& m = run.methods[j];
      auto& a = avg.methods[j];
      a.label = m.label;
      a.policy_return += m.policy_return / denom;
      a.mean_alignment_residual += m.mean_alignment_residual / denom;
      a.max_alignment_residual += m.max_alignment_residual / denom;
      a.kl_to_hard_mean += m.kl_to_hard_mean / denom;
      a.kl_to_hard_max += m.kl_to_hard_max / denom;
      a.fallback_count += m.fallback_count;
      a.beta_negative += m.beta_negative;
      a.beta_zero += m.beta_zero;
      a.beta_positive += m.beta_positive;
      a.kl_finite_states += m.kl_finite_states;
      a.kl_infinite_states += m.kl_infinite_states;
    }
  }
  for (auto& a : avg.methods) {
    const auto mean_int = [denom](int total) {
      return static_cast<int>(std::llround(total / denom));
    };
    a.fallback_count = mean_int(a.fallback_count);
    a.beta_negative = mean_int(a.beta_negative);
    a.beta_zero = mean_int(a.beta_zero);
    a.beta_positive = mean_int(a.beta_positive);
    a.kl_finite_states = mean_int(a.kl_finite_states);
    a.kl_infinite_states = mean_int(a.kl_infinite_states);
  }
  return avg;
}

struct ExperimentSetup {
  Mdp mdp;
  TabularPolicy behavior;
  TransitionDataset data;
  double behavior_return = 0.0;
  double optimal_return = 0.0;
};

ExperimentSetup prepare(const ExperimentConfig& config) {
  config.validate();
  ExperimentSetup s;
  s.mdp = with_stage("build_gridworld", [&] {
    return build_gridworld(config.world.width, config.world.height,
                           config.world.goal_cells, config.world.step_reward,
                           config.world.goal_reward, config.world.slip_prob,
                           config.critic.gamma);
  });
  s.behavior =
      with_stage("behavior_policy", [&] { return behavior_policy(s.mdp, config.world.epsilon); });
  s.data = with_stage("generate_dataset", [&] {
    return generate_dataset(s.mdp, s.behavior, config.n_transitions,
                            config.max_episode_len, config.seed);
  });
  s.behavior_return = policy_return(s.mdp, s.behavior);
  s.optimal_return = policy_return(s.mdp, greedy_policy(optimal_q_values(s.mdp)));
  return s;
}

ResultRecord record_shell(const ExperimentConfig& config) {
  ResultRecord record;
  record.name = config.name;
  record.config_digest = config_hash(config);
  record.seed = config.seed;
  record.timestamp = now_utc();
  record.config = config.to_json();
  return record;
}

}  // namespace

ResultRecord run_experiment(const ExperimentConfig& config) {
  const ExperimentSetup s = prepare(config);
  ResultRecord record = record_shell(config);
  record.runs.push_back(run_pipeline(s.mdp, s.data, config, "clean",
                                     s.behavior_return, s.optimal_return,
                                     config.threads));
  return record;
}

ResultRecord robustness_sweep(const ExperimentConfig& config) {
  if (config.corruptions.empty())
    throw ConfigError("robustness_sweep: corruption list must not be empty");
  const ExperimentSetup s = prepare(config);
  ResultRecord record = record_shell(config);

  const int n_corr = static_cast<int>(config.corruptions.size());
  record.runs.resize(static_cast<std::size_t>(n_corr) + 1);
  record.runs[0] = run_pipeline(s.mdp, s.data, config, "clean", s.behavior_return,
                                s.optimal_return, config.threads);
  // Runs fan out across threads; each inner pipeline stays sequential.
  parallel_for(n_corr, config.threads, [&](int k) {
    const CorruptionConfig& c = config.corruptions[static_cast<std::size_t>(k)];
    const TransitionDataset corrupted = with_stage(
        "corrupt " + to_string(c.kind), [&] { return corrupt(s.data, s.mdp, c); });
    record.runs[static_cast<std::size_t>(k) + 1] =
        run_pipeline(s.mdp, corrupted, config, corruption_label(c),
                     s.behavior_return, s.optimal_return, 1);
  });

  std::vector<RunResult> corrupted_runs(record.runs.begin() + 1, record.runs.end());
  record.runs.push_back(average_run(corrupted_runs));
  return record;
}

std::vector<std::pair<double, double>> suboptimality_curve(
    std::span<const double> q_row, std::span<const double> mu_row, double v,
    const std::vector<double>& etas, const Regularizer& reg) {
  SimplexInstance inst;
  inst.mu.assign(mu_row.begin(), mu_row.end());
  inst.q.assign(q_row.begin(), q_row.end());
  inst.v_target = v;
  inst.reg = reg;
  std::vector<double> hard;
  try {
    hard = oracle_ipf(inst);
  } catch (const InfeasibleError&) {
    return {};
  }
  std::vector<std::pair<double, double>> curve;
  curve.reserve(etas.size());
  for (const double eta : etas) {
    inst.eta = eta;
    const SoftSolution soft = oracle_ipf_soft(inst, VMode::fixed);
    curve.emplace_back(eta, kl_rows(soft.pi, hard));
  }
  return curve;
}

ExperimentConfig benchmark_config() {
  ExperimentConfig c;
  c.name = "gridworld-5x5-mixed-v1";
  c.world.width = 5;
  c.world.height = 5;
  c.world.goal_cells = {24};
  c.world.step_reward = -1.0;
  c.world.goal_reward = 10.0;
  c.world.slip_prob = 0.1;
  c.world.epsilon = 0.5;
  c.n_transitions = 4000;
  c.max_episode_len = 40;
  c.behavior_smoothing = 0.0;
  c.seed = 20240;
  c.critic.tau = 0.7;
  c.critic.gamma = 0.99;

  WeightSpec spec;
  spec.method = Method::align_hard;
  c.methods.push_back(spec);
  spec.method = Method::align_soft;
  c.methods.push_back(spec);
  spec.method = Method::awr;
  c.methods.push_back(spec);
  spec.method = Method::idql_expectile;
  c.methods.push_back(spec);
  spec.method = Method::mixed;
  c.methods.push_back(spec);

  for (const AttackKind kind :
       {AttackKind::observation, AttackKind::action, AttackKind::reward,
        AttackKind::dynamics, AttackKind::mixed}) {
    CorruptionConfig corruption;
    corruption.kind = kind;
    corruption.rate = 0.5;
    corruption.scale = 0.5;
    corruption.seed = c.seed;
    c.corruptions.push_back(corruption);
  }
  return c;
}

nlohmann::json MethodResult::to_json() const {
  return nlohmann::json{{"label", label},
                        {"policy_return", policy_return},
                        {"mean_alignment_residual", mean_alignment_residual},
                        {"max_alignment_residual", max_alignment_residual},
                        {"fallback_count", fallback_count},
                        {"beta_negative", beta_negative},
                        {"beta_zero", beta_zero},
                        {"beta_positive", beta_positive},
                        {"kl_to_hard_mean", kl_to_hard_mean},
                        {"kl_to_hard_max", kl_to_hard_max},
                        {"kl_finite_states", kl_finite_states},
                        {"kl_infinite_states", kl_infinite_states}};
}

nlohmann::json RunResult::to_json() const {
  nlohmann::json method_list = nlohmann::json::array();
  for (const auto& m : methods) method_list.push_back(m.to_json());
  return nlohmann::json{{"label", label},
                        {"behavior_return", behavior_return},
                        {"optimal_return", optimal_return},
                        {"methods", std::move(method_list)}};
}

nlohmann::json ResultRecord::to_json(bool include_timestamp) const {
  nlohmann::json run_list = nlohmann::json::array();
  for (const auto& r : runs) run_list.push_back(r.to_json());
  nlohmann::json j{{"name", name},
                   {"config_hash", config_digest},
                   {"seed", seed},
                   {"config", config},
                   {"runs", std::move(run_list)}};
  if (include_timestamp) j["timestamp"] = timestamp;
  return j;
}

std::string ResultRecord::to_csv() const {
  std::string csv =
      "corruption,method,policy_return,mean_alignment_residual,"
      "max_alignment_residual,fallback_count,beta_negative,beta_zero,"
      "beta_positive,kl_to_hard_mean,kl_to_hard_max,kl_finite_states,"
      "kl_infinite_states,behavior_return,optimal_return\n";
  char buf[512];
  for (const auto& run : runs)
    for (const auto& m : run.methods) {
      std::snprintf(buf, sizeof buf,
                    "%s,%s,%.17g,%.17g,%.17g,%d,%d,%d,%d,%.17g,%.17g,%d,%d,%.17g,"
                    "%.17g\n",
                    run.label.c_str(), m.label.c_str(), m.policy_return,
                    m.mean_alignment_residual, m.max_alignment_residual,
                    m.fallback_count, m.beta_negative, m.beta_zero, m.beta_positive,
                    m.kl_to_hard_mean, m.kl_to_hard_max, m.kl_finite_states,
                    m.kl_infinite_states, run.behavior_return, run.optimal_return);
      csv += buf;
    }
  return csv;
}

}  // namespace alignrl
