#pragma once

// Run configuration. Every field has a key used in config files
// (`mem_cells = 32`) and a matching command-line flag (`--mem-cells 32`).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dntm/array.hpp"

namespace dntm {

struct RunConfig {
  std::string task = "copy";  // copy | recall | babi:<id> | pmnist | mnist
  std::string controller = "gru";
  std::string attention = "continuous";
  std::string baseline = "mab";
  std::size_t steps = 1;
  std::size_t mem_cells = 120;
  std::size_t addr_dim = 16;
  std::size_t content_dim = 28;
  std::size_t hidden = 100;
  double lr = 0;  // 0 picks the controller default
  std::size_t batch = 160;
  std::size_t max_updates = 100000;
  std::uint64_t seed = 1;
  std::string dtype = "float64";

  double entropy_weight = 0.01;
  double huber_delta = 1.0;
  double clip_norm = 10.0;
  bool rw_reg = false;
  double rw_lambda_start = 1.0;
  double rw_lambda_end = 0.1;
  std::size_t rw_decay_updates = 0;  // 0 decays over max_updates
  bool predict_reg = false;
  double predict_weight = 1.0;
  std::size_t curriculum_period = 100;
  std::size_t baseline_hidden = 32;

  bool lru = true;
  bool lru_prose = false;
  bool share_lru = false;
  bool nop = true;

  std::size_t eval_interval = 200;
  std::size_t valid_size = 0;  // 0: 10% of the training pool, or 10% of a batch for generators
  double target_bce = 0;       // stop early once validation BCE drops below; 0 disables

  std::size_t copy_width = 8;
  std::size_t copy_min = 1;
  std::size_t copy_max = 20;
  std::size_t recall_width = 6;
  std::size_t recall_item_len = 3;
  std::size_t recall_min = 2;
  std::size_t recall_max = 6;

  std::string babi_train;
  std::string babi_test;
  std::size_t babi_max_facts = 0;
  std::size_t embed_dim = 32;
  std::string fact_encoder = "gru";

  std::string mnist_images;
  std::string mnist_labels;
  std::uint64_t permutation_seed = 1234;

  std::string checkpoint;
  std::string metrics_out;
  std::string trace_attention;

  double learning_rate() const {
    if (lr > 0) return lr;
    return controller == "feedforward" ? 0.007 : 0.003;
  }

  bool is_babi() const {
    if (task.rfind("babi:", 0) != 0 || task.size() < 6 || task.size() > 7) return false;
    const std::string id = task.substr(5);
    if (id.front() == '0' || !std::all_of(id.begin(), id.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      return false;
    }
    const int n = std::stoi(id);
    return n >= 1 && n <= 20;
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

inline std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  const auto bad = [&] { return ConfigError("invalid value '" + text + "' for " + flag_name(key)); };
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw bad();
  } else if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != text.size() || !std::isfinite(v)) throw bad();
    return static_cast<T>(v);
  } else {
    if (text.empty() || text.front() == '-') throw bad();
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(text, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != text.size()) throw bad();
    return static_cast<T>(v);
  }
}

template <typename T>
ConfigField field(const char* key, T RunConfig::*member) {
  return {key, [key = std::string(key), member](RunConfig& c, const std::string& v) { c.*member = parse_value<T>(key, v); },
          [member](const RunConfig& c) { return nlohmann::json(c.*member); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("task", &RunConfig::task),
      field("controller", &RunConfig::controller),
      field("attention", &RunConfig::attention),
      field("baseline", &RunConfig::baseline),
      field("steps", &RunConfig::steps),
      field("mem_cells", &RunConfig::mem_cells),
      field("addr_dim", &RunConfig::addr_dim),
      field("content_dim", &RunConfig::content_dim),
      field("hidden", &RunConfig::hidden),
      field("lr", &RunConfig::lr),
      field("batch", &RunConfig::batch),
      field("max_updates", &RunConfig::max_updates),
      field("seed", &RunConfig::seed),
      field("dtype", &RunConfig::dtype),
      field("entropy_weight", &RunConfig::entropy_weight),
      field("huber_delta", &RunConfig::huber_delta),
      field("clip_norm", &RunConfig::clip_norm),
      field("rw_reg", &RunConfig::rw_reg),
      field("rw_lambda_start", &RunConfig::rw_lambda_start),
      field("rw_lambda_end", &RunConfig::rw_lambda_end),
      field("rw_decay_updates", &RunConfig::rw_decay_updates),
      field("predict_reg", &RunConfig::predict_reg),
      field("predict_weight", &RunConfig::predict_weight),
      field("curriculum_period", &RunConfig::curriculum_period),
      field("baseline_hidden", &RunConfig::baseline_hidden),
      field("lru", &RunConfig::lru),
      field("lru_prose", &RunConfig::lru_prose),
      field("share_lru", &RunConfig::share_lru),
      field("nop", &RunConfig::nop),
      field("eval_interval", &RunConfig::eval_interval),
      field("valid_size", &RunConfig::valid_size),
      field("target_bce", &RunConfig::target_bce),
      field("copy_width", &RunConfig::copy_width),
      field("copy_min", &RunConfig::copy_min),
      field("copy_max", &RunConfig::copy_max),
      field("recall_width", &RunConfig::recall_width),
      field("recall_item_len", &RunConfig::recall_item_len),
      field("recall_min", &RunConfig::recall_min),
      field("recall_max", &RunConfig::recall_max),
      field("babi_train", &RunConfig::babi_train),
      field("babi_test", &RunConfig::babi_test),
      field("babi_max_facts", &RunConfig::babi_max_facts),
      field("embed_dim", &RunConfig::embed_dim),
      field("fact_encoder", &RunConfig::fact_encoder),
      field("mnist_images", &RunConfig::mnist_images),
      field("mnist_labels", &RunConfig::mnist_labels),
      field("permutation_seed", &RunConfig::permutation_seed),
      field("checkpoint", &RunConfig::checkpoint),
      field("metrics_out", &RunConfig::metrics_out),
      field("trace_attention", &RunConfig::trace_attention),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.push_back(f.key);
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// `key = value` lines; blank lines and lines starting with '#' are skipped.
// Entries keep file order; keys are checked, values are not.
struct ConfigEntry {
  std::string key, value;
  std::size_t line = 0;
};

inline std::vector<ConfigEntry> config_entries(const std::string& text, const std::string& origin = "config") {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  const auto keys = config_keys();
  while (std::getline(in, line)) {
    ++number;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = detail::trim(t.substr(0, eq));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError(where + "unknown config key '" + key + "'");
    }
    out.push_back({std::move(key), detail::trim(t.substr(eq + 1)), number});
  }
  return out;
}

inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  for (const auto& e : config_entries(text, origin)) {
    try {
      set_config_value(cfg, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(origin + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
}

inline std::string read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path + " (--config)");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  apply_config_text(cfg, read_config_file(path), path);
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(cfg);
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    set_config_value(cfg, key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return cfg;
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  auto one_of = [&](const std::string& value, std::initializer_list<const char*> options, const char* key) {
    for (const char* o : options) {
      if (value == o) return;
    }
    std::string list;
    for (const char* o : options) list += std::string(list.empty() ? "" : ", ") + o;
    fail(detail::flag_name(key) + " must be one of " + list + " (got '" + value + "')");
  };
  auto positive = [&](std::size_t v, const char* key) {
    if (v == 0) fail(detail::flag_name(key) + " must be positive");
  };

  if (c.task != "copy" && c.task != "recall" && c.task != "pmnist" && c.task != "mnist" && !c.is_babi()) {
    fail("--task must be copy, recall, babi:<id>, pmnist or mnist (got '" + c.task + "')");
  }
  one_of(c.controller, {"gru", "feedforward"}, "controller");
  one_of(c.attention, {"continuous", "discrete", "curriculum"}, "attention");
  one_of(c.baseline, {"mab", "ib"}, "baseline");
  one_of(c.dtype, {"float64", "float32"}, "dtype");
  one_of(c.fact_encoder, {"gru", "bow"}, "fact_encoder");
  positive(c.steps, "steps");
  positive(c.addr_dim, "addr_dim");
  positive(c.content_dim, "content_dim");
  positive(c.hidden, "hidden");
  positive(c.batch, "batch");
  positive(c.max_updates, "max_updates");
  positive(c.eval_interval, "eval_interval");
  positive(c.curriculum_period, "curriculum_period");
  positive(c.baseline_hidden, "baseline_hidden");
  if (c.mem_cells < 2) fail("--mem-cells must be at least 2");
  if (c.lr < 0) fail("--lr must be positive");
  if (c.huber_delta <= 0) fail("--huber-delta must be positive");
  if (c.entropy_weight < 0) fail("--entropy-weight must be nonnegative");
  if (c.clip_norm < 0) fail("--clip-norm must be nonnegative");
  if (c.rw_lambda_start < 0 || c.rw_lambda_end < 0) fail("--rw-lambda-start and --rw-lambda-end must be nonnegative");
  if (c.predict_weight < 0) fail("--predict-weight must be nonnegative");
  if (c.target_bce < 0) fail("--target-bce must be nonnegative");

  if (c.task == "copy") {
    positive(c.copy_width, "copy_width");
    if (c.copy_min < 1 || c.copy_min > c.copy_max) fail("--copy-min and --copy-max need 1 <= min <= max");
  }
  if (c.task == "recall") {
    positive(c.recall_width, "recall_width");
    positive(c.recall_item_len, "recall_item_len");
    if (c.recall_min < 2 || c.recall_min > c.recall_max) fail("--recall-min and --recall-max need 2 <= min <= max");
  }
  if (c.is_babi()) {
    if (c.babi_train.empty()) fail("task " + c.task + " needs a data file: missing --babi-train");
    positive(c.embed_dim, "embed_dim");
  }
  if (c.task == "pmnist" || c.task == "mnist") {
    if (c.mnist_images.empty()) fail("task " + c.task + " needs data files: missing --mnist-images");
    if (c.mnist_labels.empty()) fail("task " + c.task + " needs data files: missing --mnist-labels");
  }
}

}  // namespace dntm
