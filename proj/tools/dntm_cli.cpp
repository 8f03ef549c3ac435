// dntm: train, evaluate and inspect D-NTM models.
//
//   dntm train --task copy --max-updates 2000 --checkpoint copy.ckpt
//   dntm eval --checkpoint copy.ckpt --attention discrete --trace-attention trace.json
//   dntm dump-episodes --task recall --count 4
//
// Exit status: 0 success, 2 bad configuration or data, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "dntm/dntm.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

// Every config key becomes a string flag; values are parsed by the config
// layer so errors name the flag the same way config files do.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app, const std::vector<std::string>& skip = {}) {
    app.add_option("--config", config_file, "key = value file applied before other flags");
    const auto defaults = dntm::config_to_json(dntm::RunConfig{});
    for (const auto& key : dntm::config_keys()) {
      if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
      const std::string flag = dntm::detail::flag_name(key);
      const bool is_bool = defaults[key].is_boolean();
      auto* opt = app.add_option_function<std::string>(
          flag, [this, key, is_bool](const std::string& v) { values[key] = v.empty() && is_bool ? "true" : v; },
          "default: " + defaults[key].dump());
      if (is_bool) opt->expected(0, 1);
    }
  }

  dntm::RunConfig resolve() const {
    dntm::RunConfig cfg;
    if (!config_file.empty()) dntm::apply_config_file(cfg, config_file);
    for (const auto& [k, v] : values) dntm::set_config_value(cfg, k, v);
    return cfg;
  }
};

int train(const ConfigFlags& flags) {
  const dntm::RunConfig cfg = flags.resolve();
  dntm::validate(cfg);
  const auto summary = cfg.dtype == "float32" ? dntm::train_run<float>(cfg, std::cerr)
                                              : dntm::train_run<double>(cfg, std::cerr);
  return summary.numeric_failure ? kExitNumeric : 0;
}

int evaluate(const ConfigFlags& flags, const std::string& checkpoint, const std::string& attention,
             const std::string& trace_path) {
  if (checkpoint.empty()) throw dntm::ConfigError("eval needs --checkpoint");
  std::map<std::string, std::string> overrides;
  if (!flags.config_file.empty()) {
    for (const auto& e : dntm::config_entries(dntm::read_config_file(flags.config_file), flags.config_file)) {
      overrides[e.key] = e.value;
    }
  }
  for (const auto& [k, v] : flags.values) overrides[k] = v;
  std::optional<dntm::EvalAttention> mode;
  if (!attention.empty()) mode = dntm::parse_eval_attention(attention);

  const bool f32 = dntm::checkpoint_dtype(checkpoint) == "float32";
  const auto report = f32 ? dntm::eval_run<float>(checkpoint, overrides, mode, !trace_path.empty())
                          : dntm::eval_run<double>(checkpoint, overrides, mode, !trace_path.empty());
  if (!trace_path.empty()) dntm::write_trace(trace_path, report.trace, report.attention);

  nlohmann::json out{{"split", report.split},
                     {"attention", dntm::eval_attention_name(report.attention)},
                     {"episodes", report.stats.episodes},
                     {"loss", report.stats.loss}};
  if (report.kind == dntm::OutputKind::bits) {
    out["bce"] = report.stats.bce;
  } else {
    out["accuracy"] = report.stats.accuracy;
  }
  std::cout << out.dump() << '\n';
  return std::isfinite(report.stats.loss) ? 0 : kExitNumeric;
}

int dump_episodes(const ConfigFlags& flags, std::size_t count, const std::string& out_path) {
  dntm::RunConfig cfg = flags.resolve();
  dntm::validate(cfg);
  dntm::Rng master(cfg.seed);
  dntm::Rng data_rng = master.split(1);
  const auto data = dntm::load_task(cfg, data_rng);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::trunc);
    if (!file) throw dntm::ConfigError("cannot write " + out_path + " (--out)");
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  for (const auto& e : data.sample(data_rng, count)) out << dntm::episode_to_jsonl(e) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic Neural Turing Machine"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_flags.attach(*train_cmd);

  ConfigFlags eval_flags;
  std::string eval_checkpoint, eval_attention, eval_trace;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(*eval_cmd, {"checkpoint", "attention", "trace_attention"});
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to load")->required();
  eval_cmd->add_option("--attention", eval_attention, "continuous, discrete (argmax) or sample");
  eval_cmd->add_option("--trace-attention", eval_trace, "write attention weights of one episode as JSON");

  ConfigFlags dump_flags;
  std::size_t dump_count = 10;
  std::string dump_out;
  auto* dump_cmd = app.add_subcommand("dump-episodes", "write generated episodes as JSON lines");
  dump_flags.attach(*dump_cmd);
  dump_cmd->add_option("--count", dump_count, "number of episodes");
  dump_cmd->add_option("--out", dump_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return train(train_flags);
    if (*eval_cmd) return evaluate(eval_flags, eval_checkpoint, eval_attention, eval_trace);
    return dump_episodes(dump_flags, dump_count, dump_out);
  } catch (const dntm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dntm::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
