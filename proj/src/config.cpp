#include "alignrl/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace alignrl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream stream(s);
  while (std::getline(stream, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value +
                      "' as a number");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value +
                      "' as an integer");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    // stoull wraps negative input around instead of rejecting it.
    if (value.find('-') != std::string::npos)
      throw std::invalid_argument("negative");
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value +
                      "' as an unsigned integer");
  }
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> keys;
  std::istringstream stream(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (keys.count(full))
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": duplicate key '" + full + "'");
    keys[full] = value;
  }
  return keys;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

CorruptionConfig parse_corruption(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3)
    throw ConfigError("corruption spec '" + text +
                      "' must look like kind:rate:scale");
  CorruptionConfig c;
  c.kind = attack_kind_from_string(parts[0]);
  c.rate = parse_double("corruption rate", parts[1]);
  c.scale = parse_double("corruption scale", parts[2]);
  return c;
}

ExperimentConfig experiment_from_config(
    const std::map<std::string, std::string>& keys) {
  ExperimentConfig config;
  config.methods.clear();
  std::map<std::string, bool> seen;
  const auto take = [&](const std::string& key) -> const std::string* {
    seen[key] = true;
    const auto it = keys.find(key);
    return it == keys.end() ? nullptr : &it->second;
  };
  const auto take_double = [&](const std::string& key, double& slot) {
    if (const auto* v = take(key)) slot = parse_double(key, *v);
  };
  const auto take_int = [&](const std::string& key, int& slot) {
    if (const auto* v = take(key)) slot = static_cast<int>(parse_int(key, *v));
  };

  if (const auto* v = take("name")) config.name = *v;
  take_int("world.width", config.world.width);
  take_int("world.height", config.world.height);
  if (const auto* v = take("world.goals")) {
    config.world.goal_cells.clear();
    for (const auto& item : split(*v, ','))
      config.world.goal_cells.push_back(
          static_cast<int>(parse_int("world.goals", item)));
  }
  take_double("world.step_reward", config.world.step_reward);
  take_double("world.goal_reward", config.world.goal_reward);
  take_double("world.slip", config.world.slip_prob);
  take_double("world.epsilon", config.world.epsilon);

  take_int("data.n", config.n_transitions);
  take_int("data.max_episode_len", config.max_episode_len);
  take_double("data.smoothing", config.behavior_smoothing);
  if (const auto* v = take("data.seed")) config.seed = parse_uint("data.seed", *v);

  take_double("critic.tau", config.critic.tau);
  take_double("critic.gamma", config.critic.gamma);
  if (const auto* v = take("critic.max_sweeps"))
    config.critic.max_sweeps = parse_int("critic.max_sweeps", *v);
  take_double("critic.tol", config.critic.tol);
  take_double("critic.polyak", config.critic.polyak);

  WeightSpec base;
  take_double("methods.eta", base.eta);
  take_double("methods.awr_alpha", base.awr_alpha);
  take_double("methods.kappa", base.kappa);
  take_double("methods.tau", base.tau);
  take_double("methods.weight_floor", base.weight_floor);
  take_double("methods.weight_cap", base.weight_cap);
  if (const auto* v = take("methods.regularizer"))
    base.regularizer = Regularizer::from_string(*v);
  if (const auto* v = take("methods.exponent_sign"))
    base.exponent_sign = exponent_sign_from_string(*v);
  std::string method_list = "align-hard";
  if (const auto* v = take("methods.list")) method_list = *v;
  for (const auto& item : split(method_list, ',')) {
    WeightSpec spec = base;
    spec.method = method_from_string(item);
    config.methods.push_back(spec);
  }

  if (const auto* v = take("corruptions.list")) {
    for (const auto& item : split(*v, ',')) {
      CorruptionConfig c = parse_corruption(item);
      c.seed = config.seed;
      config.corruptions.push_back(c);
    }
  }

  for (const auto& [key, value] : keys)
    if (!seen.count(key)) throw ConfigError("unknown config key '" + key + "'");
  return config;
}

}  // namespace alignrl
