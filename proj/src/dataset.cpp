#include "alignrl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace alignrl {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::observation: return "observation";
    case AttackKind::action: return "action";
    case AttackKind::reward: return "reward";
    case AttackKind::dynamics: return "dynamics";
    case AttackKind::mixed: return "mixed";
  }
  throw ConfigError("to_string: unknown attack kind");
}

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "observation") return AttackKind::observation;
  if (name == "action") return AttackKind::action;
  if (name == "reward") return AttackKind::reward;
  if (name == "dynamics") return AttackKind::dynamics;
  if (name == "mixed") return AttackKind::mixed;
  throw ConfigError("unknown attack kind '" + name + "'");
}

void CorruptionConfig::validate() const {
  if (!(rate >= 0.0) || rate > 1.0)
    throw ConfigError("CorruptionConfig: rate must lie in [0, 1]");
  if (!(scale >= 0.0)) throw ConfigError("CorruptionConfig: scale must be non-negative");
}

TransitionDataset generate_dataset(const Mdp& mdp, const TabularPolicy& behavior,
                                   int n_transitions, int max_episode_len,
                                   std::uint64_t seed) {
  if (behavior.n_states != mdp.n_states || behavior.n_actions != mdp.n_actions)
    throw ConfigError("generate_dataset: behavior shape does not match MDP");
  if (n_transitions < 0) throw ConfigError("generate_dataset: negative n_transitions");
  if (max_episode_len < 1)
    throw ConfigError("generate_dataset: max_episode_len must be at least 1");

  TransitionDataset data;
  data.seed = seed;
  data.n_states = mdp.n_states;
  data.n_actions = mdp.n_actions;
  data.source_mdp_hash = mdp_hash(mdp);
  data.transitions.reserve(static_cast<std::size_t>(n_transitions));

  Rng rng(substream_seed(seed, "dataset"));
  int empty_episodes = 0;
  while (static_cast<int>(data.transitions.size()) < n_transitions) {
    int s = rng.categorical(mdp.initial_dist);
    bool produced = false;
    for (int t = 0; t < max_episode_len; ++t) {
      if (is_absorbing(mdp, s)) break;
      const int a = rng.categorical(behavior.row(s));
      const int s_next = rng.categorical(mdp.transition_row(s, a));
      const bool done = is_absorbing(mdp, s_next);
      data.transitions.push_back({s, a, mdp.r(s, a), s_next, done});
      produced = true;
      if (static_cast<int>(data.transitions.size()) == n_transitions) break;
      if (done) break;
      s = s_next;
    }
    if (!produced && ++empty_episodes > 10000)
      throw ConfigError("generate_dataset: initial distribution only reaches absorbing states");
  }
  return data;
}

BehaviorModel estimate_behavior(const TransitionDataset& data, int n_states,
                                int n_actions, double smoothing) {
  if (n_states <= 0 || n_actions <= 0)
    throw ConfigError("estimate_behavior: non-positive dimensions");
  if (smoothing < 0.0) throw ConfigError("estimate_behavior: negative smoothing");

  BehaviorModel model;
  model.smoothing = smoothing;
  model.probs.n_states = n_states;
  model.probs.n_actions = n_actions;
  model.probs.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
  model.support_counts.assign(static_cast<std::size_t>(n_states) * n_actions, 0);

  for (std::size_t i = 0; i < data.transitions.size(); ++i) {
    const Transition& t = data.transitions[i];
    if (t.s < 0 || t.s >= n_states || t.a < 0 || t.a >= n_actions ||
        t.s_next < 0 || t.s_next >= n_states)
      throw ConfigError("estimate_behavior: record " + std::to_string(i) +
                        " outside the (n_states, n_actions) grid");
    model.support_counts[static_cast<std::size_t>(t.s) * n_actions + t.a]++;
  }

  for (int s = 0; s < n_states; ++s) {
    const std::int64_t total = model.state_count(s);
    for (int a = 0; a < n_actions; ++a) {
      model.probs.prob(s, a) =
          total == 0 ? 1.0 / n_actions
                     : (static_cast<double>(model.count(s, a)) + smoothing) /
                           (static_cast<double>(total) + smoothing * n_actions);
    }
  }
  model.probs.validate();
  return model;
}

namespace {

int corruption_count(double rate, std::size_t n) {
  const double exact = rate * static_cast<double>(n);
  if (exact <= 0.0) return 0;
  // ceil with a float-noise guard: 0.1*100 must stay 10, not round up to 11.
  const int k = std::max(1, static_cast<int>(std::ceil(exact - 1e-9)));
  return std::min(k, static_cast<int>(n));
}

std::vector<int> select_indices(std::uint64_t seed, const std::string& stream,
                                std::size_t n, int k) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(substream_seed(seed, stream));
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(n) - i);
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> per_dim_std(const Mdp& mdp, const TransitionDataset& data,
                                bool use_next) {
  const std::size_t dim = mdp.state_coords.front().size();
  std::vector<double> mean(dim, 0.0), sq(dim, 0.0);
  for (const Transition& t : data.transitions) {
    const auto& c = mdp.state_coords[use_next ? t.s_next : t.s];
    for (std::size_t d = 0; d < dim; ++d) {
      mean[d] += c[d];
      sq[d] += c[d] * c[d];
    }
  }
  const double n = static_cast<double>(data.transitions.size());
  std::vector<double> out(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    mean[d] /= n;
    out[d] = std::sqrt(std::max(0.0, sq[d] / n - mean[d] * mean[d]));
  }
  return out;
}

int nearest_state(const Mdp& mdp, const std::vector<double>& pos) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int s = 0; s < mdp.n_states; ++s) {
    double d = 0.0;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      const double diff = mdp.state_coords[s][k] - pos[k];
      d += diff * diff;
    }
    if (d < best_d) {  // strict: ties keep the lowest state id
      best_d = d;
      best = s;
    }
  }
  return best;
}

void apply_attack(AttackKind kind, const TransitionDataset& original,
                  TransitionDataset& out, const Mdp& mdp,
                  const CorruptionConfig& config, CorruptionReport* report) {
  const std::size_t n = original.size();
  const int k = corruption_count(config.rate, n);
  const std::string label = to_string(kind);
  const std::vector<int> picks = select_indices(config.seed, "select:" + label, n, k);

  if ((kind == AttackKind::observation || kind == AttackKind::dynamics) &&
      mdp.state_coords.empty())
    throw ConfigError("corrupt: " + label + " attack requires state coordinates");
  if (kind == AttackKind::action && mdp.n_actions < 2)
    throw ConfigError("corrupt: action attack needs at least two actions");

  std::vector<double> field_std;
  if (kind == AttackKind::observation)
    field_std = per_dim_std(mdp, original, /*use_next=*/false);
  else if (kind == AttackKind::dynamics)
    field_std = per_dim_std(mdp, original, /*use_next=*/true);

  for (const int i : picks) {
    Rng rng(substream_seed(config.seed, label, static_cast<std::uint64_t>(i)));
    Transition& t = out.transitions[i];
    switch (kind) {
      case AttackKind::observation:
      case AttackKind::dynamics: {
        const int base = kind == AttackKind::observation ? t.s : t.s_next;
        std::vector<double> pos = mdp.state_coords[base];
        for (std::size_t d = 0; d < pos.size(); ++d)
          pos[d] += rng.uniform(-config.scale, config.scale) * field_std[d];
        const int snapped = nearest_state(mdp, pos);
        if (kind == AttackKind::observation)
          t.s = snapped;
        else
          t.s_next = snapped;
        break;
      }
      case AttackKind::action: {
        const int j = rng.uniform_int(mdp.n_actions - 1);
        t.a = j >= t.a ? j + 1 : j;
        break;
      }
      case AttackKind::reward:
        t.r = rng.uniform(-30.0 * config.scale, 30.0 * config.scale);
        break;
      case AttackKind::mixed:
        throw ConfigError("corrupt: mixed is expanded before apply_attack");
    }
  }
  if (report) report->touched.emplace_back(kind, picks);
}

}  // namespace

TransitionDataset corrupt(const TransitionDataset& data, const Mdp& mdp,
                          const CorruptionConfig& config, CorruptionReport* report) {
  config.validate();
  TransitionDataset out = data;
  if (data.transitions.empty() || config.rate == 0.0) {
    if (report) report->touched.clear();
    return out;
  }
  if (report) report->touched.clear();
  if (config.kind == AttackKind::mixed) {
    // Independent selections per attack, applied in a fixed order.
    for (const AttackKind kind : {AttackKind::observation, AttackKind::action,
                                  AttackKind::reward, AttackKind::dynamics})
      apply_attack(kind, data, out, mdp, config, report);
  } else {
    apply_attack(config.kind, data, out, mdp, config, report);
  }
  return out;
}

void write_jsonl(const TransitionDataset& data, const std::string& path) {
  std::ofstream file(path);
  if (!file) throw ConfigError("write_jsonl: cannot open '" + path + "' for writing");
  nlohmann::json meta{{"seed", data.seed},
                      {"n_states", data.n_states},
                      {"n_actions", data.n_actions}};
  if (!data.source_mdp_hash.empty()) meta["source_mdp_hash"] = data.source_mdp_hash;
  file << nlohmann::json{{"meta", meta}}.dump() << '\n';
  for (const Transition& t : data.transitions) {
    file << nlohmann::json{{"s", t.s}, {"a", t.a}, {"r", t.r},
                           {"s_next", t.s_next}, {"done", t.done}}
                .dump()
         << '\n';
  }
  if (!file) throw ConfigError("write_jsonl: write to '" + path + "' failed");
}

TransitionDataset read_jsonl(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw ConfigError("read_jsonl: cannot open '" + path + "'");
  TransitionDataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("read_jsonl: " + path + ":" + std::to_string(line_no) +
                        ": " + e.what());
    }
    try {
      if (j.contains("meta")) {
        const auto& meta = j.at("meta");
        data.seed = meta.value("seed", std::uint64_t{0});
        data.n_states = meta.value("n_states", 0);
        data.n_actions = meta.value("n_actions", 0);
        data.source_mdp_hash = meta.value("source_mdp_hash", std::string{});
        continue;
      }
      data.transitions.push_back({j.at("s").get<int>(), j.at("a").get<int>(),
                                  j.at("r").get<double>(), j.at("s_next").get<int>(),
                                  j.at("done").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("read_jsonl: " + path + ":" + std::to_string(line_no) +
                        ": missing or mistyped field: " + e.what());
    }
  }
  return data;
}

std::string mdp_hash(const Mdp& mdp) {
  const std::string dump = mdp.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : dump) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

}  // namespace alignrl
