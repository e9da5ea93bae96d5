#pragma once

#include <map>
#include <string>

#include "alignrl/eval_harness.hpp"

namespace alignrl {

/// Flat experiment-config text: `[section]` headers, `key = value` lines,
/// `#` comments (full-line or trailing), blank lines ignored. Keys are
/// returned as "section.key" ("key" before any section header). Duplicate
/// keys and malformed lines raise ConfigError with the line number.
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// parse_config_text over a file; unreadable path raises ConfigError.
std::map<std::string, std::string> load_config_file(const std::string& path);

/// Build an ExperimentConfig from parsed keys. Every key is optional and
/// falls back to the struct defaults; unknown keys raise ConfigError, as do
/// unparsable values (named by key). Recognized keys:
///   name
///   [world]   width, height, goals (comma list), step_reward, goal_reward,
///             slip, epsilon
///   [data]    n, max_episode_len, smoothing, seed
///   [critic]  tau, gamma, max_sweeps, tol, polyak
///   [methods] list (comma list of method names), eta, awr_alpha, kappa,
///             tau, weight_floor, weight_cap, regularizer, exponent_sign
///   [corruptions] list (comma list of kind:rate:scale entries, seeded by
///             the experiment seed)
/// The [methods] scalars apply to every listed method.
ExperimentConfig experiment_from_config(
    const std::map<std::string, std::string>& keys);

/// "kind:rate:scale" -> CorruptionConfig (seed filled by the caller).
CorruptionConfig parse_corruption(const std::string& text);

}  // namespace alignrl
