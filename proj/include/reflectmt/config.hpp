// SPDX-License-Identifier: Apache-2.0
//
// Pipeline configuration. One human-editable INI-style file drives every
// subcommand: [section] headers, key = value lines, full-line # or ;
// comments. Environment variables override API keys and nothing else.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "reflectmt/datagen.hpp"
#include "reflectmt/gateway.hpp"
#include "reflectmt/grpo.hpp"
#include "reflectmt/inference.hpp"
#include "reflectmt/reward.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatagenSettings {
  std::string backend = "scripted";  // scripted | remote
  double theta = 90.0;
  int k_max = 5;
  int workers = 8;
  double translator_temperature = 0.7;
  double reflector_temperature = 0.1;
};

struct InferenceSettings {
  std::string backend = "scripted";  // scripted | remote
  InferenceMode mode = InferenceMode::Full;
  std::string counting_source = "stream-symbols";
};

struct PathSettings {
  std::string sources;         // datagen input, one sentence per line
  std::string samples_out;     // kept reflective samples, JSONL
  std::string sft_out;         // SFT pairs, JSONL
  std::string task;            // candidate sets for the toy policy, JSONL
  std::string checkpoint_dir;  // train outputs
  std::string stats_csv;       // default report input
  std::string report_dir;      // report outputs
  std::string corpus;          // inference input
};

struct PipelineConfig {
  uint64_t seed = 0;
  EndpointConfig translator;
  EndpointConfig reflector;
  EndpointConfig judge;
  DatagenSettings datagen;
  RewardParams reward;
  GrpoConfig grpo;
  InferenceSettings inference;
  PathSettings paths;
};

// Every key the config file accepts, as section.key. --help prints this
// list, and the parser rejects anything that is not on it.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "seed",
      "endpoint.translator.base_url",
      "endpoint.translator.model",
      "endpoint.translator.api_key",
      "endpoint.translator.timeout_s",
      "endpoint.translator.max_retries",
      "endpoint.translator.temperature",
      "endpoint.translator.top_p",
      "endpoint.reflector.base_url",
      "endpoint.reflector.model",
      "endpoint.reflector.api_key",
      "endpoint.reflector.timeout_s",
      "endpoint.reflector.max_retries",
      "endpoint.reflector.temperature",
      "endpoint.reflector.top_p",
      "endpoint.judge.base_url",
      "endpoint.judge.model",
      "endpoint.judge.api_key",
      "endpoint.judge.timeout_s",
      "endpoint.judge.max_retries",
      "endpoint.judge.temperature",
      "endpoint.judge.top_p",
      "datagen.backend",
      "datagen.theta",
      "datagen.k_max",
      "datagen.workers",
      "datagen.translator_temperature",
      "datagen.reflector_temperature",
      "reward.stage1_weights",
      "reward.stage2_weights",
      "reward.eta",
      "reward.mu",
      "grpo.group_size",
      "grpo.epsilon",
      "grpo.beta",
      "grpo.learning_rate",
      "grpo.batch_size",
      "grpo.rollout_temperature",
      "grpo.epochs",
      "grpo.eval_interval",
      "inference.backend",
      "inference.mode",
      "inference.counting_source",
      "paths.sources",
      "paths.samples_out",
      "paths.sft_out",
      "paths.task",
      "paths.checkpoint_dir",
      "paths.stats_csv",
      "paths.report_dir",
      "paths.corpus",
  };
  return keys;
}

namespace detail {

inline double config_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

inline long config_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

inline uint64_t config_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" +
                      value + "'");
  }
}

inline RewardWeights config_weights(const std::string& key,
                                    const std::string& value) {
  std::vector<double> parts;
  size_t start = 0;
  while (start <= value.size()) {
    size_t comma = value.find(',', start);
    std::string cell = value.substr(
        start, (comma == std::string::npos ? value.size() : comma) - start);
    parts.push_back(config_double(key, trim(cell)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (parts.size() != 4) {
    throw ConfigError(key + ": expected 4 comma-separated weights (form, "
                            "trans, refl, imp), got " +
                      std::to_string(parts.size()));
  }
  for (double w : parts) {
    if (!(w >= 0.0)) throw ConfigError(key + ": weights must be >= 0");
  }
  return RewardWeights{parts[0], parts[1], parts[2], parts[3]};
}

inline bool set_endpoint_key(EndpointConfig& ep, const std::string& field,
                             const std::string& key, const std::string& value) {
  if (field == "base_url") ep.base_url = value;
  else if (field == "model") ep.model_name = value;
  else if (field == "api_key") ep.api_key = value;
  else if (field == "timeout_s") ep.timeout_s = config_double(key, value);
  else if (field == "max_retries")
    ep.max_retries = static_cast<int>(config_int(key, value));
  else if (field == "temperature") ep.temperature = config_double(key, value);
  else if (field == "top_p") ep.top_p = config_double(key, value);
  else return false;
  return true;
}

}  // namespace detail

inline InferenceMode parse_mode(const std::string& text) {
  if (text == "full") return InferenceMode::Full;
  if (text == "early-stop") return InferenceMode::EarlyStop;
  throw ConfigError("inference mode must be 'full' or 'early-stop', got '" +
                    text + "'");
}

inline void validate_config(const PipelineConfig& cfg) {
  if (!(cfg.datagen.theta > 0.0 && cfg.datagen.theta <= 100.0)) {
    throw ConfigError("datagen.theta: must be in (0, 100]");
  }
  if (cfg.datagen.k_max < 1) throw ConfigError("datagen.k_max: must be >= 1");
  if (cfg.datagen.workers < 1) {
    throw ConfigError("datagen.workers: must be >= 1");
  }
  if (cfg.datagen.backend != "scripted" && cfg.datagen.backend != "remote") {
    throw ConfigError("datagen.backend: must be 'scripted' or 'remote'");
  }
  if (cfg.inference.backend != "scripted" &&
      cfg.inference.backend != "remote") {
    throw ConfigError("inference.backend: must be 'scripted' or 'remote'");
  }
  if (cfg.grpo.n < 2) throw ConfigError("grpo.group_size: must be >= 2");
  if (!(cfg.grpo.epsilon > 0.0)) {
    throw ConfigError("grpo.epsilon: must be > 0");
  }
  if (!(cfg.grpo.beta >= 0.0)) throw ConfigError("grpo.beta: must be >= 0");
  if (!(cfg.grpo.learning_rate > 0.0)) {
    throw ConfigError("grpo.learning_rate: must be > 0");
  }
  if (cfg.grpo.batch_size < 1) {
    throw ConfigError("grpo.batch_size: must be >= 1");
  }
  if (!(cfg.grpo.rollout_temperature > 0.0)) {
    throw ConfigError("grpo.rollout_temperature: must be > 0");
  }
  if (cfg.grpo.epochs < 1) throw ConfigError("grpo.epochs: must be >= 1");
  if (!(cfg.reward.improvement.eta > 0.0)) {
    throw ConfigError("reward.eta: must be > 0");
  }
  if (!(cfg.reward.improvement.mu >= 0.0)) {
    throw ConfigError("reward.mu: must be >= 0");
  }
}

inline PipelineConfig parse_config_text(const std::string& text,
                                        const std::string& where) {
  PipelineConfig cfg;
  std::string section;
  bool saw_translator_temp = false;
  bool saw_reflector_temp = false;
  size_t start = 0;
  size_t lineno = 0;
  while (start <= text.size()) {
    size_t nl = text.find('\n', start);
    std::string line = text.substr(
        start, (nl == std::string::npos ? text.size() : nl) - start);
    ++lineno;
    auto at = [&] { return where + ":" + std::to_string(lineno) + ": "; };
    std::string_view t = trim_view(line);
    if (!t.empty() && t.front() != '#' && t.front() != ';') {
      if (t.front() == '[') {
        if (t.back() != ']') {
          throw ConfigError(at() + "unterminated section header");
        }
        section = trim(t.substr(1, t.size() - 2));
      } else {
        size_t eq = t.find('=');
        if (eq == std::string_view::npos) {
          throw ConfigError(at() + "expected key = value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        const auto& known = config_keys();
        if (std::find(known.begin(), known.end(), full) == known.end()) {
          throw ConfigError(at() + "unknown key '" + full + "'");
        }
        if (full == "seed") {
          cfg.seed = detail::config_u64(full, value);
        } else if (full.rfind("endpoint.", 0) == 0) {
          std::string rest = full.substr(9);
          size_t dot = rest.find('.');
          std::string which = rest.substr(0, dot);
          std::string field = rest.substr(dot + 1);
          EndpointConfig& ep = which == "translator" ? cfg.translator
                               : which == "reflector" ? cfg.reflector
                                                      : cfg.judge;
          detail::set_endpoint_key(ep, field, full, value);
        } else if (full == "datagen.backend") {
          cfg.datagen.backend = value;
        } else if (full == "datagen.theta") {
          cfg.datagen.theta = detail::config_double(full, value);
        } else if (full == "datagen.k_max") {
          cfg.datagen.k_max = static_cast<int>(detail::config_int(full, value));
        } else if (full == "datagen.workers") {
          cfg.datagen.workers =
              static_cast<int>(detail::config_int(full, value));
        } else if (full == "datagen.translator_temperature") {
          cfg.datagen.translator_temperature =
              detail::config_double(full, value);
          saw_translator_temp = true;
        } else if (full == "datagen.reflector_temperature") {
          cfg.datagen.reflector_temperature =
              detail::config_double(full, value);
          saw_reflector_temp = true;
        } else if (full == "reward.stage1_weights") {
          cfg.reward.stage1_weights = detail::config_weights(full, value);
        } else if (full == "reward.stage2_weights") {
          cfg.reward.stage2_weights = detail::config_weights(full, value);
        } else if (full == "reward.eta") {
          cfg.reward.improvement.eta = detail::config_double(full, value);
        } else if (full == "reward.mu") {
          cfg.reward.improvement.mu = detail::config_double(full, value);
        } else if (full == "grpo.group_size") {
          cfg.grpo.n = static_cast<size_t>(detail::config_int(full, value));
        } else if (full == "grpo.epsilon") {
          cfg.grpo.epsilon = detail::config_double(full, value);
        } else if (full == "grpo.beta") {
          cfg.grpo.beta = detail::config_double(full, value);
        } else if (full == "grpo.learning_rate") {
          cfg.grpo.learning_rate = detail::config_double(full, value);
        } else if (full == "grpo.batch_size") {
          cfg.grpo.batch_size =
              static_cast<size_t>(detail::config_int(full, value));
        } else if (full == "grpo.rollout_temperature") {
          cfg.grpo.rollout_temperature = detail::config_double(full, value);
        } else if (full == "grpo.epochs") {
          cfg.grpo.epochs =
              static_cast<size_t>(detail::config_int(full, value));
        } else if (full == "grpo.eval_interval") {
          cfg.grpo.eval_interval =
              static_cast<size_t>(detail::config_int(full, value));
        } else if (full == "inference.backend") {
          cfg.inference.backend = value;
        } else if (full == "inference.mode") {
          cfg.inference.mode = parse_mode(value);
        } else if (full == "inference.counting_source") {
          cfg.inference.counting_source = value;
        } else if (full == "paths.sources") {
          cfg.paths.sources = value;
        } else if (full == "paths.samples_out") {
          cfg.paths.samples_out = value;
        } else if (full == "paths.sft_out") {
          cfg.paths.sft_out = value;
        } else if (full == "paths.task") {
          cfg.paths.task = value;
        } else if (full == "paths.checkpoint_dir") {
          cfg.paths.checkpoint_dir = value;
        } else if (full == "paths.stats_csv") {
          cfg.paths.stats_csv = value;
        } else if (full == "paths.report_dir") {
          cfg.paths.report_dir = value;
        } else if (full == "paths.corpus") {
          cfg.paths.corpus = value;
        }
      }
    }
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  cfg.grpo.seed = cfg.seed;
  // the datagen section owns the agent sampling temperatures when it sets them
  if (saw_translator_temp) {
    cfg.translator.temperature = cfg.datagen.translator_temperature;
  }
  if (saw_reflector_temp) {
    cfg.reflector.temperature = cfg.datagen.reflector_temperature;
  }
  validate_config(cfg);
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  return parse_config_text(read_file(path), path);
}

// Secrets only: REFLECTMT_API_KEY fills every endpoint, and the role-specific
// REFLECTMT_{TRANSLATOR,REFLECTOR,JUDGE}_API_KEY variables win over it.
inline void apply_env_overrides(
    PipelineConfig& cfg,
    const std::function<const char*(const char*)>& getenv_fn = [](const char* n) {
      return std::getenv(n);
    }) {
  if (const char* v = getenv_fn("REFLECTMT_API_KEY")) {
    cfg.translator.api_key = v;
    cfg.reflector.api_key = v;
    cfg.judge.api_key = v;
  }
  if (const char* v = getenv_fn("REFLECTMT_TRANSLATOR_API_KEY")) {
    cfg.translator.api_key = v;
  }
  if (const char* v = getenv_fn("REFLECTMT_REFLECTOR_API_KEY")) {
    cfg.reflector.api_key = v;
  }
  if (const char* v = getenv_fn("REFLECTMT_JUDGE_API_KEY")) {
    cfg.judge.api_key = v;
  }
}

inline GenConfig to_gen_config(const PipelineConfig& cfg) {
  GenConfig g;
  g.theta = cfg.datagen.theta;
  g.k_max = cfg.datagen.k_max;
  g.translator = cfg.translator;
  g.reflector = cfg.reflector;
  return g;
}

}  // namespace reflectmt
