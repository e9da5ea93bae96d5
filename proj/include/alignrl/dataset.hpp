#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alignrl/mdp.hpp"
#include "alignrl/rng.hpp"

namespace alignrl {

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

/// Ordered collection of logged transitions plus provenance.
struct TransitionDataset {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
  int n_states = 0;
  int n_actions = 0;
  std::string source_mdp_hash;  // empty when unknown

  std::size_t size() const { return transitions.size(); }
};

/// Empirical behavior policy with Laplace smoothing. Rows of states never
/// seen in the dataset are uniform.
struct BehaviorModel {
  TabularPolicy probs;
  std::vector<std::int64_t> support_counts;  // [s][a]
  double smoothing = 0.0;

  std::int64_t count(int s, int a) const {
    return support_counts[static_cast<std::size_t>(s) * probs.n_actions + a];
  }
  std::int64_t state_count(int s) const {
    std::int64_t total = 0;
    for (int a = 0; a < probs.n_actions; ++a) total += count(s, a);
    return total;
  }
  bool supported(int s, int a) const { return count(s, a) > 0; }
  bool visited(int s) const { return state_count(s) > 0; }
};

enum class AttackKind { observation, action, reward, dynamics, mixed };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);

/// One corruption pass: `rate` selects ceil(rate*N) records, `scale` sets the
/// noise magnitude, `seed` feeds the per-record noise streams.
struct CorruptionConfig {
  AttackKind kind = AttackKind::reward;
  double rate = 0.0;
  double scale = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Indices the corruption pass touched, one entry per applied attack
/// (several for AttackKind::mixed). Indices are sorted.
struct CorruptionReport {
  std::vector<std::pair<AttackKind, std::vector<int>>> touched;
};

/// Roll episodes from mdp.initial_dist under `behavior`, truncating episodes
/// at max_episode_len or when an absorbing state is entered, until exactly
/// n_transitions records exist. Records carry r = R(s,a) and done = "s_next
/// is absorbing". Deterministic given seed.
TransitionDataset generate_dataset(const Mdp& mdp, const TabularPolicy& behavior,
                                   int n_transitions, int max_episode_len,
                                   std::uint64_t seed);

/// mu(a|s) = (count(s,a) + smoothing) / (count(s) + smoothing*n_actions);
/// unvisited states get uniform rows.
BehaviorModel estimate_behavior(const TransitionDataset& data, int n_states,
                                int n_actions, double smoothing);

/// Apply the configured attack to exactly ceil(rate*N) uniformly chosen
/// records (per attack for mixed), leaving length and order unchanged.
/// Noise draws come from per-record counter streams, so the result does not
/// depend on processing order. Observation/dynamics attacks jitter the state
/// coordinates by Uniform[-scale, scale] per dimension times the dataset-wide
/// per-dimension std of that field, then snap to the nearest state by
/// Euclidean distance (ties toward the lowest id); they require state_coords.
/// Action attacks resample uniformly among the other actions; reward attacks
/// redraw r from Uniform[-30*scale, 30*scale].
TransitionDataset corrupt(const TransitionDataset& data, const Mdp& mdp,
                          const CorruptionConfig& config,
                          CorruptionReport* report = nullptr);

/// One JSON object per line; first line holds {"meta": {seed, n_states,
/// n_actions}}. read_jsonl accepts files with or without the meta line.
void write_jsonl(const TransitionDataset& data, const std::string& path);
TransitionDataset read_jsonl(const std::string& path);

/// Stable FNV-1a hash of the canonical MDP JSON, for dataset provenance.
std::string mdp_hash(const Mdp& mdp);

}  // namespace alignrl
