#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/denoiser.hpp"
#include "ddm/error.hpp"

namespace ddm {

struct RunConfig {
  std::string dataset;
  /// "" means take the task from the dataset's meta.json.
  std::string task;
  DenoiserConfig denoiser;
  std::vector<std::size_t> steps{50, 100, 200};
  std::size_t repetitions = 1;
  double eval_reg = 1e-3;
  std::string out_dir;
  std::string tag;
  std::string checkpoint;
  std::string representations;
  std::size_t degree_cap = 128;
  bool ablate = false;
  bool csv = false;
  bool refit = false;
  /// Train a fresh denoiser (seed + r) for every evaluation repetition r.
  bool retrain = false;
  std::size_t probe_hidden = 32;
  std::size_t probe_epochs = 200;
  double probe_lr = 0.01;
  std::size_t ellipse_samples = 500;
  double ellipse_noise = 0.1;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const std::string t = trim(s);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw UsageError("config key '" + key + "': cannot parse '" + s + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + s + "'");
}

inline std::vector<std::size_t> parse_steps(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(key, item));
  }
  if (out.empty()) throw UsageError("config key '" + key + "': empty step list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> m = [] {
    std::map<std::string, Setter> s;
    auto str = [](std::string RunConfig::*f) { return [f](RunConfig& c, const std::string& v) { c.*f = trim(v); }; };
    auto num = [](const std::string& key, auto get) {
      return [key, get](RunConfig& c, const std::string& v) {
        using T = std::remove_reference_t<decltype(get(c))>;
        get(c) = parse_number<T>(key, v);
      };
    };
    auto flag = [](const std::string& key, bool RunConfig::*f) {
      return [key, f](RunConfig& c, const std::string& v) { c.*f = parse_bool(key, v); };
    };
    s["dataset"] = str(&RunConfig::dataset);
    s["task"] = [](RunConfig& c, const std::string& v) {
      const std::string t = trim(v);
      if (t != "node" && t != "graph" && !t.empty())
        throw UsageError("config key 'task': expected one of {node, graph}, got '" + t + "'");
      c.task = t;
    };
    s["out_dir"] = str(&RunConfig::out_dir);
    s["tag"] = str(&RunConfig::tag);
    s["checkpoint"] = str(&RunConfig::checkpoint);
    s["representations"] = str(&RunConfig::representations);
    s["hidden_dim"] = num("hidden_dim", [](RunConfig& c) -> std::size_t& { return c.denoiser.hidden_dim; });
    s["time_embed_dim"] = num("time_embed_dim", [](RunConfig& c) -> std::size_t& { return c.denoiser.time_embed_dim; });
    s["num_steps"] = num("num_steps", [](RunConfig& c) -> std::size_t& { return c.denoiser.num_steps; });
    s["beta_start"] = num("beta_start", [](RunConfig& c) -> double& { return c.denoiser.beta_start; });
    s["beta_end"] = num("beta_end", [](RunConfig& c) -> double& { return c.denoiser.beta_end; });
    s["lr"] = num("lr", [](RunConfig& c) -> double& { return c.denoiser.lr; });
    s["epochs"] = num("epochs", [](RunConfig& c) -> std::size_t& { return c.denoiser.epochs; });
    s["batch_size"] = num("batch_size", [](RunConfig& c) -> std::size_t& { return c.denoiser.batch_size; });
    s["noise_mode"] = [](RunConfig& c, const std::string& v) {
      try {
        c.denoiser.mode = parse_noise_mode(trim(v));
      } catch (const ContractError& e) {
        throw UsageError(std::string("config key 'noise_mode': ") + e.what());
      }
    };
    s["steps"] = [](RunConfig& c, const std::string& v) { c.steps = parse_steps("steps", v); };
    s["repetitions"] = num("repetitions", [](RunConfig& c) -> std::size_t& { return c.repetitions; });
    s["eval_reg"] = num("eval_reg", [](RunConfig& c) -> double& { return c.eval_reg; });
    s["degree_cap"] = num("degree_cap", [](RunConfig& c) -> std::size_t& { return c.degree_cap; });
    s["ablate"] = flag("ablate", &RunConfig::ablate);
    s["csv"] = flag("csv", &RunConfig::csv);
    s["refit"] = flag("refit", &RunConfig::refit);
    s["retrain"] = flag("retrain", &RunConfig::retrain);
    s["probe_hidden"] = num("probe_hidden", [](RunConfig& c) -> std::size_t& { return c.probe_hidden; });
    s["probe_epochs"] = num("probe_epochs", [](RunConfig& c) -> std::size_t& { return c.probe_epochs; });
    s["probe_lr"] = num("probe_lr", [](RunConfig& c) -> double& { return c.probe_lr; });
    s["ellipse_samples"] = num("ellipse_samples", [](RunConfig& c) -> std::size_t& { return c.ellipse_samples; });
    s["ellipse_noise"] = num("ellipse_noise", [](RunConfig& c) -> double& { return c.ellipse_noise; });
    s["seed"] = num("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    return s;
  }();
  return m;
}

/// Flags that may appear on the command line without a value.
inline bool is_bool_key(const std::string& k) { return k == "ablate" || k == "csv" || k == "refit" || k == "retrain"; }

}  // namespace detail

inline std::vector<std::string> valid_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_setters()) keys.push_back(k);
  return keys;
}

/// Applies one key/value pair; unknown keys and malformed values are usage errors.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& setters = detail::config_setters();
  const auto it = setters.find(key);
  if (it == setters.end()) {
    std::string msg = "unknown config key '" + key + "'; valid keys:";
    for (const auto& k : valid_config_keys()) msg += " " + k;
    throw UsageError(msg);
  }
  it->second(cfg, value);
}

namespace detail {

inline std::string json_scalar_text(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) {
      if (!e.is_number_integer() && !e.is_number_unsigned())
        throw UsageError("config key '" + key + "': array entries must be integers");
      s += (s.empty() ? "" : ",") + e.dump();
    }
    return s;
  }
  throw UsageError("config key '" + key + "': unsupported JSON value type");
}

}  // namespace detail

/// Parses a config file (JSON object or key=value lines, '#' comments) into `cfg`.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  const std::string body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(origin + ": invalid JSON: " + e.what());
    }
    for (const auto& [k, v] : j.items()) set_config_value(cfg, k, detail::json_scalar_text(k, v));
    return;
  }
  std::stringstream ss(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(ss, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(no) + ": expected key=value, got '" + line + "'");
    set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

/// Config file (optional) + `--key value` overrides + DDM_SEED. Later sources win.
inline RunConfig parse_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                              const char* env_seed = std::getenv("DDM_SEED")) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw UsageError("cannot open config file " + file->string());
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str(), file->string());
  }
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    const std::string& a = overrides[i];
    if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'; overrides take the form --key value");
    std::string key = a.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else if (detail::is_bool_key(key) && (i + 1 == overrides.size() || overrides[i + 1].rfind("--", 0) == 0)) {
      value = "true";
    } else {
      if (i + 1 == overrides.size()) throw UsageError("missing value for --" + key);
      value = overrides[++i];
    }
    set_config_value(cfg, key, value);
  }
  if (env_seed && *env_seed) {
    try {
      cfg.seed = detail::parse_number<std::uint64_t>("DDM_SEED", env_seed);
    } catch (const UsageError&) {
      throw UsageError(std::string("DDM_SEED: cannot parse '") + env_seed + "' as an unsigned integer");
    }
  }
  cfg.denoiser.seed = cfg.seed;
  return cfg;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["task"] = c.task;
  j["denoiser"] = to_json(c.denoiser);
  j["steps"] = c.steps;
  j["repetitions"] = c.repetitions;
  j["eval_reg"] = c.eval_reg;
  j["out_dir"] = c.out_dir;
  j["tag"] = c.tag;
  j["checkpoint"] = c.checkpoint;
  j["representations"] = c.representations;
  j["degree_cap"] = c.degree_cap;
  j["ablate"] = c.ablate;
  j["csv"] = c.csv;
  j["refit"] = c.refit;
  j["retrain"] = c.retrain;
  j["probe_hidden"] = c.probe_hidden;
  j["probe_epochs"] = c.probe_epochs;
  j["probe_lr"] = c.probe_lr;
  j["ellipse_samples"] = c.ellipse_samples;
  j["ellipse_noise"] = c.ellipse_noise;
  j["seed"] = c.seed;
  return j;
}

}  // namespace ddm
