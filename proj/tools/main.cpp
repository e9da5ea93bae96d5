#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "alignrl/config.hpp"
#include "alignrl/eval_harness.hpp"
#include "alignrl/oracle.hpp"
#include "alignrl/rng.hpp"

namespace {

using namespace alignrl;

/// Seed precedence: explicit flag, then the config file's data.seed, then the
/// ALIGN_EXTRACT_SEED environment variable, then the built-in default.
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value,
                           const std::optional<std::uint64_t>& config_value,
                           std::uint64_t fallback) {
  if (flag_given) return flag_value;
  if (config_value) return *config_value;
  if (const char* env = std::getenv("ALIGN_EXTRACT_SEED")) {
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("ALIGN_EXTRACT_SEED is not an unsigned "
                                    "integer: '") +
                        env + "'");
    }
  }
  return fallback;
}

ExperimentConfig load_experiment(const std::string& config_path, bool seed_given,
                                 std::uint64_t seed_value) {
  std::optional<std::uint64_t> config_seed;
  ExperimentConfig config;
  if (config_path.empty()) {
    config = benchmark_config();
  } else {
    const auto keys = load_config_file(config_path);
    config = experiment_from_config(keys);
    if (keys.count("data.seed")) config_seed = config.seed;
  }
  const std::uint64_t seed =
      resolve_seed(seed_given, seed_value, config_seed, config.seed);
  config.seed = seed;
  for (auto& c : config.corruptions) c.seed = seed;
  return config;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse JSON file " + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open output file: " + path);
  out << content;
  if (!out) throw ConfigError("failed writing output file: " + path);
}

int cmd_gen_data(const ExperimentConfig& config, const std::string& out_path) {
  config.validate();
  const Mdp mdp = build_gridworld(config.world.width, config.world.height,
                                  config.world.goal_cells, config.world.step_reward,
                                  config.world.goal_reward, config.world.slip_prob,
                                  config.critic.gamma);
  const TabularPolicy behavior = behavior_policy(mdp, config.world.epsilon);
  const TransitionDataset data = generate_dataset(
      mdp, behavior, config.n_transitions, config.max_episode_len, config.seed);
  write_jsonl(data, out_path);

  std::set<std::pair<int, int>> pairs;
  for (const auto& t : data.transitions) pairs.emplace(t.s, t.a);
  const int total = mdp.n_states * mdp.n_actions;
  std::printf("wrote %s: %d transitions, seed %llu, coverage %.3f (%zu/%d "
              "state-action pairs)\n",
              out_path.c_str(), static_cast<int>(data.size()),
              static_cast<unsigned long long>(config.seed),
              static_cast<double>(pairs.size()) / total, pairs.size(), total);
  return 0;
}

int cmd_train_critic(const std::string& data_path, const std::string& out_path,
                     const CriticConfig& critic, double smoothing) {
  const TransitionDataset data = read_jsonl(data_path);
  if (data.n_states <= 0 || data.n_actions <= 0)
    throw ConfigError(data_path +
                      ": dataset has no meta line with n_states/n_actions");
  const BehaviorModel behavior =
      estimate_behavior(data, data.n_states, data.n_actions, smoothing);
  const ValueTables values = train_critic(data, behavior, critic);
  write_text(out_path, values.to_json().dump(2) + "\n");

  int visited = 0, supported = 0;
  double v_min = 0.0, v_max = 0.0, v_sum = 0.0;
  for (int s = 0; s < data.n_states; ++s) {
    if (!values.visited(s)) continue;
    const double v = values.v[static_cast<std::size_t>(s)];
    if (visited == 0) v_min = v_max = v;
    v_min = std::min(v_min, v);
    v_max = std::max(v_max, v);
    v_sum += v;
    ++visited;
    for (int a = 0; a < data.n_actions; ++a)
      if (values.supported(s, a)) ++supported;
  }
  std::printf("wrote %s: tau=%g gamma=%g, final sweep residual below %g\n",
              out_path.c_str(), critic.tau, critic.gamma, critic.tol);
  std::printf("  %d visited states, %d supported pairs, V in [%.6g, %.6g], "
              "mean %.6g\n",
              visited, supported, v_min, v_max,
              visited > 0 ? v_sum / visited : 0.0);
  return 0;
}

int cmd_extract(const std::string& data_path, const std::string& critic_path,
                const std::string& out_path, const WeightSpec& spec,
                double smoothing, int n_samples, int state, std::uint64_t seed) {
  const TransitionDataset data = read_jsonl(data_path);
  const ValueTables values = ValueTables::from_json(read_json_file(critic_path));
  const BehaviorModel behavior =
      estimate_behavior(data, values.q.n_states, values.q.n_actions, smoothing);
  const ExtractedPolicy extracted = extract_policy_full(behavior, values, spec);

  if (n_samples > 0) {
    if (state < 0 || state >= values.q.n_states)
      throw ConfigError("--state " + std::to_string(state) +
                        " outside [0, " + std::to_string(values.q.n_states) + ")");
    const int action = extract_action_sampled(
        behavior.probs.row(state),
        [&](int a) { return extracted.per_state_weights(state, a); }, n_samples,
        seed);
    const nlohmann::json out{{"state", state},
                             {"action", action},
                             {"n_samples", n_samples},
                             {"seed", seed},
                             {"method", to_string(spec.method)}};
    write_text(out_path, out.dump(2) + "\n");
    std::printf("state %d -> action %d (%d samples, seed %llu)\n", state, action,
                n_samples, static_cast<unsigned long long>(seed));
    return 0;
  }

  write_text(out_path, extracted.to_json().dump(2) + "\n");
  std::printf("wrote %s: method %s, %zu fallback states\n", out_path.c_str(),
              to_string(spec.method).c_str(), extracted.fallback_states.size());
  return 0;
}

int cmd_verify(int n_instances, double tol, std::uint64_t seed,
               const Regularizer& reg, const std::string& out_path) {
  if (n_instances < 1) throw ConfigError("--n-instances must be >= 1");
  if (tol < 0.0) throw ConfigError("--tol must be non-negative");

  Rng rng(substream_seed(seed, "verify-instances"));
  const double soft_eta = 3.0;
  bool all_pass = true;
  double worst_gap = -1.0;
  nlohmann::json worst;
  nlohmann::json per_instance = nlohmann::json::array();

  for (int i = 0; i < n_instances; ++i) {
    const int n = 2 + rng.uniform_int(7);
    SimplexInstance inst;
    inst.reg = reg;
    inst.eta = soft_eta;
    inst.mu.resize(n);
    inst.q.resize(n);
    double total = 0.0;
    for (double& m : inst.mu) total += m = 0.05 + rng.uniform01();
    for (double& m : inst.mu) m /= total;
    for (double& qi : inst.q) qi = rng.uniform(-2.0, 2.0);
    const double lo = *std::min_element(inst.q.begin(), inst.q.end());
    const double hi = *std::max_element(inst.q.begin(), inst.q.end());
    inst.v_target = lo + (0.2 + 0.6 * rng.uniform01()) * (hi - lo);

    const StateMultipliers sol =
        solve_state_multipliers(inst.q, inst.mu, inst.v_target, reg, 1e-10);
    std::vector<double> closed(inst.mu.size(), 0.0);
    double z = 0.0;
    for (std::size_t k = 0; k < inst.mu.size(); ++k)
      z += closed[k] = inst.mu[k] * reg.weight(sol.alpha, sol.beta, inst.q[k]);
    for (double& c : closed) c /= z;

    const std::vector<double> pi_oracle = oracle_ipf(inst);
    double l1_hard = 0.0;
    for (std::size_t k = 0; k < closed.size(); ++k)
      l1_hard += std::abs(closed[k] - pi_oracle[k]);

    const KktReport kkt = kkt_check(closed, inst.mu, inst.q, inst.v_target,
                                    sol.alpha, sol.beta, reg);

    // Soft cross-check for the log member only: its closed form is the
    // normalized exponential tilt of the squared gap.
    double l1_soft = 0.0;
    if (reg.kind() == RegKind::log_ratio) {
      std::vector<double> soft_closed(inst.mu.size());
      double zs = 0.0;
      for (std::size_t k = 0; k < inst.mu.size(); ++k) {
        const double gap = inst.q[k] - inst.v_target;
        zs += soft_closed[k] = inst.mu[k] * std::exp(-soft_eta * gap * gap);
      }
      for (double& c : soft_closed) c /= zs;
      const SoftSolution soft = oracle_ipf_soft(inst, VMode::fixed);
      for (std::size_t k = 0; k < soft_closed.size(); ++k)
        l1_soft += std::abs(soft_closed[k] - soft.pi[k]);
    }

    const bool converged = sol.status == SolveStatus::converged;
    const bool pass = converged && l1_hard <= tol && kkt.max_residual() <= tol &&
                      l1_soft <= 10.0 * tol;
    all_pass = all_pass && pass;
    per_instance.push_back(nlohmann::json{{"index", i},
                                          {"n_actions", n},
                                          {"l1_hard", l1_hard},
                                          {"kkt_max", kkt.max_residual()},
                                          {"l1_soft", l1_soft},
                                          {"pass", pass}});
    const double gap = std::max({l1_hard, kkt.max_residual(), l1_soft / 10.0});
    if (gap > worst_gap) {
      worst_gap = gap;
      worst = nlohmann::json{{"index", i},
                             {"mu", inst.mu},
                             {"q", inst.q},
                             {"v_target", inst.v_target},
                             {"alpha", sol.alpha},
                             {"beta", sol.beta},
                             {"status", to_string(sol.status)},
                             {"l1_hard", l1_hard},
                             {"kkt", kkt.to_json()},
                             {"l1_soft", l1_soft}};
    }
  }

  const nlohmann::json report{{"n_instances", n_instances},
                              {"tol", tol},
                              {"seed", seed},
                              {"regularizer", reg.name()},
                              {"all_pass", all_pass},
                              {"worst", worst},
                              {"instances", per_instance}};
  if (!out_path.empty()) write_text(out_path, report.dump(2) + "\n");
  std::printf("verify: %d instances, regularizer %s, tol %g -> %s\n", n_instances,
              reg.name().c_str(), tol, all_pass ? "all pass" : "FAIL");
  if (!all_pass)
    std::fprintf(stderr, "worst instance: %s\n", worst.dump().c_str());
  return all_pass ? 0 : 1;
}

void print_record(const ResultRecord& record) {
  for (const auto& run : record.runs) {
    std::printf("[%s]\n", run.label.c_str());
    for (const auto& m : run.methods)
      std::printf("  %-16s J=%10.4f  max_residual=%.3e  fallbacks=%d\n",
                  m.label.c_str(), m.policy_return, m.max_alignment_residual,
                  m.fallback_count);
  }
}

int cmd_run(const ExperimentConfig& config, const std::string& out_prefix,
            bool sweep) {
  const ResultRecord record = sweep ? robustness_sweep(config) : run_experiment(config);
  write_text(out_prefix + ".json", record.to_json(true).dump(2) + "\n");
  write_text(out_prefix + ".csv", record.to_csv());
  std::printf("%s: config %s, seed %llu -> %s.json, %s.csv\n",
              record.name.c_str(), record.config_digest.c_str(),
              static_cast<unsigned long long>(record.seed), out_prefix.c_str(),
              out_prefix.c_str());
  print_record(record);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular offline RL: expectile critic training and "
               "alignment-aware policy extraction"};
  app.require_subcommand(0, 1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet,
               "Suppress informational output (errors still go to stderr)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a gridworld dataset (JSONL)");
  std::string gen_config, gen_out = "dataset.jsonl";
  std::uint64_t gen_seed = 0;
  int gen_n = 0;
  gen->add_option("--config", gen_config, "Experiment config file");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Root seed");
  gen->add_option("--out", gen_out, "Output JSONL path");
  auto* gen_n_opt = gen->add_option("--n", gen_n, "Transition count override");

  // train-critic
  auto* train = app.add_subcommand("train-critic", "Fit expectile value tables");
  std::string tc_data, tc_out = "critic.json";
  CriticConfig tc_critic;
  double tc_smoothing = 0.0;
  train->add_option("--data", tc_data, "Input dataset JSONL")->required();
  train->add_option("--out", tc_out, "Output critic JSON path");
  train->add_option("--tau", tc_critic.tau, "Expectile level in (0,1)");
  train->add_option("--gamma", tc_critic.gamma, "Discount factor");
  train->add_option("--tol", tc_critic.tol, "Convergence tolerance");
  train->add_option("--max-sweeps", tc_critic.max_sweeps, "Sweep cap");
  train->add_option("--polyak", tc_critic.polyak, "Q blend factor in [0,1)");
  train->add_option("--smoothing", tc_smoothing, "Behavior Laplace smoothing");

  // extract
  auto* extract = app.add_subcommand("extract", "Extract a policy from a critic");
  std::string ex_data, ex_critic, ex_out = "policy.json";
  std::string ex_method = "align-hard", ex_reg = "log", ex_sign = "neg";
  WeightSpec ex_defaults;
  double ex_eta = ex_defaults.eta, ex_alpha = ex_defaults.awr_alpha;
  double ex_kappa = ex_defaults.kappa, ex_tau = ex_defaults.tau;
  double ex_floor = ex_defaults.weight_floor, ex_cap = ex_defaults.weight_cap;
  double ex_smoothing = 0.0;
  int ex_n_samples = 0, ex_state = 0;
  std::uint64_t ex_seed = 0;
  extract->add_option("--data", ex_data, "Input dataset JSONL")->required();
  extract->add_option("--critic", ex_critic, "Input critic JSON")->required();
  extract->add_option("--out", ex_out, "Output policy JSON path");
  extract->add_option("--method", ex_method,
                      "awr | align-soft | align-hard | idql | mixed");
  extract->add_option("--eta", ex_eta, "Soft-weight temperature");
  extract->add_option("--alpha", ex_alpha, "AWR temperature");
  extract->add_option("--kappa", ex_kappa, "Mixed-method AWR admixture");
  extract->add_option("--tau", ex_tau, "idql expectile level");
  extract->add_option("--regularizer", ex_reg, "log | linear");
  extract->add_option("--exponent-sign", ex_sign, "neg | pos");
  extract->add_option("--floor", ex_floor, "Weight floor");
  extract->add_option("--cap", ex_cap, "Weight cap");
  extract->add_option("--smoothing", ex_smoothing, "Behavior Laplace smoothing");
  extract->add_option("--n-samples", ex_n_samples,
                      "Enable sampled mode with this many draws");
  extract->add_option("--state", ex_state, "State for sampled mode");
  auto* ex_seed_opt = extract->add_option("--seed", ex_seed, "Sampling seed");

  // verify
  auto* verify = app.add_subcommand(
      "verify", "Check closed-form solutions against the brute-force oracle");
  int vf_n = 100;
  double vf_tol = 1e-4;
  std::uint64_t vf_seed = 0;
  std::string vf_reg = "log", vf_out = "verify-report.json";
  verify->add_option("--n-instances", vf_n, "Number of random instances");
  verify->add_option("--tol", vf_tol, "Per-instance L1/KKT tolerance");
  verify->add_option("--seed", vf_seed, "Instance generator seed");
  verify->add_option("--regularizer", vf_reg, "log | linear");
  verify->add_option("--out", vf_out, "Report JSON path (empty to skip)");

  // run / robust
  auto* run = app.add_subcommand("run", "Run the clean experiment pipeline");
  auto* robust = app.add_subcommand("robust", "Run the corruption sweep");
  std::string run_config, run_out = "result", rb_config, rb_out = "robust-result";
  std::uint64_t run_seed = 0, rb_seed = 0;
  int run_threads = 0, rb_threads = 0;
  std::vector<std::string> rb_corrupt;
  run->add_option("--config", run_config, "Experiment config file (default: built-in benchmark)");
  auto* run_seed_opt = run->add_option("--seed", run_seed, "Root seed override");
  run->add_option("--out", run_out, "Output path prefix");
  auto* run_threads_opt = run->add_option("--threads", run_threads, "Worker cap");
  robust->add_option("--config", rb_config, "Experiment config file (default: built-in benchmark)");
  auto* rb_seed_opt = robust->add_option("--seed", rb_seed, "Root seed override");
  robust->add_option("--out", rb_out, "Output path prefix");
  auto* rb_threads_opt = robust->add_option("--threads", rb_threads, "Worker cap");
  robust->add_option("--corrupt", rb_corrupt,
                     "kind:rate:scale entries replacing the config's list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (quiet && !std::freopen("/dev/null", "w", stdout)) return 1;

  try {
    if (gen->parsed()) {
      ExperimentConfig config =
          load_experiment(gen_config, gen_seed_opt->count() > 0, gen_seed);
      if (gen_n_opt->count() > 0) config.n_transitions = gen_n;
      return cmd_gen_data(config, gen_out);
    }
    if (train->parsed()) {
      tc_critic.validate();
      return cmd_train_critic(tc_data, tc_out, tc_critic, tc_smoothing);
    }
    if (extract->parsed()) {
      WeightSpec spec;
      spec.method = method_from_string(ex_method);
      spec.regularizer = Regularizer::from_string(ex_reg);
      spec.exponent_sign = exponent_sign_from_string(ex_sign);
      spec.eta = ex_eta;
      spec.awr_alpha = ex_alpha;
      spec.kappa = ex_kappa;
      spec.tau = ex_tau;
      spec.weight_floor = ex_floor;
      spec.weight_cap = ex_cap;
      spec.validate();
      const std::uint64_t seed =
          resolve_seed(ex_seed_opt->count() > 0, ex_seed, std::nullopt, 0);
      return cmd_extract(ex_data, ex_critic, ex_out, spec, ex_smoothing,
                         ex_n_samples, ex_state, seed);
    }
    if (verify->parsed())
      return cmd_verify(vf_n, vf_tol, vf_seed, Regularizer::from_string(vf_reg),
                        vf_out);
    if (run->parsed()) {
      ExperimentConfig config =
          load_experiment(run_config, run_seed_opt->count() > 0, run_seed);
      if (run_threads_opt->count() > 0) config.threads = run_threads;
      return cmd_run(config, run_out, false);
    }
    if (robust->parsed()) {
      ExperimentConfig config =
          load_experiment(rb_config, rb_seed_opt->count() > 0, rb_seed);
      if (rb_threads_opt->count() > 0) config.threads = rb_threads;
      if (!rb_corrupt.empty()) {
        config.corruptions.clear();
        for (const auto& entry : rb_corrupt) {
          CorruptionConfig c = parse_corruption(entry);
          c.seed = config.seed;
          config.corruptions.push_back(c);
        }
      }
      return cmd_run(config, rb_out, true);
    }
    std::fputs(app.help().c_str(), stdout);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
