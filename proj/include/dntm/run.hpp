#pragma once

// Training and evaluation runs driven by a RunConfig: task loading, periodic
// validation, metrics CSV, config echo, best-checkpoint retention and
// attention traces.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dntm/checkpoint.hpp"
#include "dntm/config.hpp"
#include "dntm/controller.hpp"
#include "dntm/tasks.hpp"
#include "dntm/training.hpp"

namespace dntm {

// ---------------------------------------------------------------------------
// Task data

struct TaskData {
  ModelConfig shape;  // input/output fields only
  Vocabulary vocab;
  std::function<Episode(Rng&)> generate;     // synthetic tasks
  std::function<Episode(std::size_t)> item;  // dataset tasks
  std::vector<std::size_t> train_ids;
  std::vector<Episode> valid;
  std::vector<Episode> test;  // bAbI test file, when given

  std::vector<Episode> sample(Rng& rng, std::size_t n) const {
    std::vector<Episode> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(generate ? generate(rng) : item(train_ids[rng.index(train_ids.size())]));
    }
    return out;
  }
};

namespace detail {

inline std::vector<BabiStory> read_babi(const std::string& path, const char* flag) {
  try {
    return parse_babi(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(path + ": " + e.what() + " (" + flag + ")");
  }
}

}  // namespace detail

inline CopyConfig copy_config(const RunConfig& c) { return {c.copy_width, c.copy_min, c.copy_max}; }
inline RecallConfig recall_config(const RunConfig& c) {
  return {c.recall_width, c.recall_item_len, c.recall_min, c.recall_max};
}

// Validation episodes of generated tasks come from their own stream; dataset
// tasks hold out the last 10% of the shuffled training file.
inline TaskData load_task(const RunConfig& cfg, Rng& rng, const Vocabulary* known_vocab = nullptr) {
  validate(cfg);
  TaskData data;
  Rng valid_rng = rng.split(0x56414c4944);
  const std::size_t generated_valid = cfg.valid_size ? cfg.valid_size : std::max<std::size_t>(64, cfg.batch / 10);

  if (cfg.task == "copy") {
    const auto task = copy_config(cfg);
    data.shape.input_dim = copy_input_dim(task);
    data.shape.output_dim = task.width;
    data.shape.output = OutputKind::bits;
    data.generate = [task](Rng& r) { return gen_copy(r, task); };
  } else if (cfg.task == "recall") {
    const auto task = recall_config(cfg);
    data.shape.input_dim = recall_input_dim(task);
    data.shape.output_dim = task.width;
    data.shape.output = OutputKind::bits;
    data.generate = [task](Rng& r) { return gen_recall(r, task); };
  } else if (cfg.is_babi()) {
    auto stories = std::make_shared<std::vector<BabiStory>>(detail::read_babi(cfg.babi_train, "--babi-train"));
    if (stories->empty()) throw ConfigError("no questions in " + cfg.babi_train + " (--babi-train)");
    std::vector<BabiStory> test_stories;
    if (!cfg.babi_test.empty()) test_stories = detail::read_babi(cfg.babi_test, "--babi-test");
    if (known_vocab) {
      data.vocab = *known_vocab;
    } else {
      data.vocab = build_vocabulary(*stories);
      for (const auto& w : build_vocabulary(test_stories).words()) data.vocab.add(w);
    }
    data.shape.token_inputs = true;
    data.shape.vocab = data.vocab.size();
    data.shape.output_dim = data.vocab.size();
    data.shape.output = OutputKind::classes;
    std::vector<Episode> episodes;
    for (const auto& s : *stories) episodes.push_back(babi_episode(s, data.vocab, cfg.babi_max_facts));
    for (const auto& s : test_stories) data.test.push_back(babi_episode(s, data.vocab, cfg.babi_max_facts));
    std::vector<std::size_t> order(episodes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::size_t n_valid = cfg.valid_size ? cfg.valid_size : episodes.size() / 10;
    n_valid = std::min(n_valid, episodes.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < order.size() - n_valid) {
        data.train_ids.push_back(order[i]);
      } else {
        data.valid.push_back(episodes[order[i]]);
      }
    }
    auto shared = std::make_shared<std::vector<Episode>>(std::move(episodes));
    data.item = [shared](std::size_t i) { return (*shared)[i]; };
    return data;
  } else {
    std::optional<std::uint64_t> perm;
    if (cfg.task == "pmnist") perm = cfg.permutation_seed;
    std::shared_ptr<PixelDataset> ds;
    try {
      ds = std::make_shared<PixelDataset>(load_idx(cfg.mnist_images, cfg.mnist_labels, perm));
    } catch (const std::runtime_error& e) {
      throw ConfigError(std::string(e.what()) + " (--mnist-images, --mnist-labels)");
    }
    if (ds->images.size() < 2) throw ConfigError("need at least two images in " + cfg.mnist_images);
    data.shape.input_dim = 1;
    data.shape.output_dim = 10;
    data.shape.output = OutputKind::classes;
    data.item = [ds](std::size_t i) { return pixel_episode(*ds, i); };
    std::vector<std::size_t> order(ds->images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::size_t n_valid = cfg.valid_size ? cfg.valid_size : order.size() / 10;
    n_valid = std::clamp<std::size_t>(n_valid, 1, order.size() - 1);
    data.train_ids.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_valid));
    for (auto it = order.end() - static_cast<std::ptrdiff_t>(n_valid); it != order.end(); ++it) {
      data.valid.push_back(data.item(*it));
    }
    return data;
  }
  for (std::size_t i = 0; i < generated_valid; ++i) data.valid.push_back(data.generate(valid_rng));
  return data;
}

// Splits episodes into lockstep groups: equal step counts and, for text,
// equal sentence lengths at every step. Group order is deterministic.
template <typename Real>
std::vector<EpisodeBatch<Real>> make_groups(const std::vector<Episode>& episodes) {
  std::map<std::vector<std::size_t>, std::vector<Episode>> buckets;
  for (const auto& e : episodes) {
    std::vector<std::size_t> key{e.steps()};
    for (const auto& words : e.tokens) key.push_back(words.size());
    buckets[key].push_back(e);
  }
  std::vector<EpisodeBatch<Real>> out;
  for (const auto& [key, group] : buckets) out.push_back(stack<Real>(group));
  return out;
}

inline ModelConfig model_config(const RunConfig& c, const TaskData& data) {
  ModelConfig m = data.shape;
  m.controller = c.controller == "feedforward" ? ControllerKind::feedforward : ControllerKind::gru;
  m.hidden = c.hidden;
  m.mem_cells = c.mem_cells;
  m.addr_dim = c.addr_dim;
  m.content_dim = c.content_dim;
  m.steps = c.steps;
  m.use_nop = c.nop;
  m.share_lru = c.share_lru;
  m.addressing.use_lru = c.lru;
  m.addressing.lru_subtract_current = c.lru_prose;
  m.predict_next_input = c.predict_reg;
  if (m.token_inputs) {
    m.embed_dim = c.embed_dim;
    m.encoder = c.fact_encoder == "bow" ? FactEncoder::bow : FactEncoder::gru;
  }
  return m;
}

inline TrainerConfig trainer_config(const RunConfig& c) {
  TrainerConfig t;
  t.attention = c.attention == "discrete"     ? AttentionTraining::discrete
                : c.attention == "curriculum" ? AttentionTraining::curriculum
                                              : AttentionTraining::continuous;
  t.baseline = c.baseline == "ib" ? BaselineMode::input_based : BaselineMode::moving_average;
  t.entropy_weight = c.entropy_weight;
  t.huber_delta = c.huber_delta;
  t.rw_regularizer = c.rw_reg;
  t.rw_lambda_start = c.rw_lambda_start;
  t.rw_lambda_end = c.rw_lambda_end;
  t.rw_decay_updates = c.rw_decay_updates ? c.rw_decay_updates : c.max_updates;
  t.predict_weight = c.predict_weight;
  t.curriculum_period = c.curriculum_period;
  t.baseline_hidden = c.baseline_hidden;
  t.adam.lr = c.learning_rate();
  t.adam.clip_norm = c.clip_norm;
  return t;
}

// Models trained with discrete heads are evaluated with argmax choices.
inline EvalAttention default_eval_attention(const RunConfig& c) {
  return c.attention == "continuous" ? EvalAttention::continuous : EvalAttention::argmax;
}

inline EvalAttention parse_eval_attention(const std::string& s) {
  if (s == "continuous") return EvalAttention::continuous;
  if (s == "discrete" || s == "argmax") return EvalAttention::argmax;
  if (s == "sample") return EvalAttention::sample;
  throw ConfigError("--attention must be continuous, discrete, argmax or sample (got '" + s + "')");
}

inline const char* eval_attention_name(EvalAttention a) {
  switch (a) {
    case EvalAttention::continuous: return "continuous";
    case EvalAttention::argmax: return "argmax";
    case EvalAttention::sample: return "sample";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Checkpoints of a training run

template <typename Real>
Checkpoint<Real> capture_checkpoint(const RunConfig& cfg, Trainer<Real>& trainer, const Rng& rng,
                                    const Vocabulary& vocab, const nlohmann::json& extra = {}) {
  Checkpoint<Real> ck;
  ck.rng_state = rng.state();
  ck.meta["config"] = config_to_json(cfg);
  ck.meta["vocab"] = vocab.words();
  ck.meta["updates"] = trainer.updates();
  ck.meta["adam_step"] = trainer.optimizer().steps();
  ck.meta["baseline_adam_step"] = trainer.baseline_optimizer().steps();
  ck.meta["normalizer"] = {{"mean", trainer.normalizer().mean},
                           {"variance", trainer.normalizer().variance},
                           {"updates", trainer.normalizer().updates}};
  ck.meta["curriculum_minibatches"] = trainer.schedule().minibatches;
  if (!extra.is_null()) ck.meta["run"] = extra;
  for (const auto& e : trainer.model().params()) ck.add(e.name, e.value);
  for (const auto& e : trainer.baseline_params()) ck.add(e.name, e.value);
  for (const auto& [name, mo] : trainer.optimizer().moments()) {
    ck.add("adam.m." + name, mo.m);
    ck.add("adam.v." + name, mo.v);
  }
  for (const auto& [name, mo] : trainer.baseline_optimizer().moments()) {
    ck.add("baseline_adam.m." + name, mo.m);
    ck.add("baseline_adam.v." + name, mo.v);
  }
  return ck;
}

// Model parameters of a checkpoint; throws ConfigError naming every missing
// or mis-shaped parameter.
template <typename Real>
Model<Real> model_from_checkpoint(const Checkpoint<Real>& ck, const ModelConfig& mc) {
  ParameterStore<Real> store;
  for (const auto& [name, a] : ck.arrays) {
    if (name.rfind("adam.", 0) == 0 || name.rfind("baseline", 0) == 0) continue;
    store.add(name, a);
  }
  Model<Real> model(mc, std::move(store));
  return model;
}

template <typename Real>
void restore_trainer(Trainer<Real>& trainer, const Checkpoint<Real>& ck, Rng& rng) {
  for (auto& e : trainer.model().params()) {
    const auto* a = ck.find(e.name);
    if (!a || a->shape() != e.value.shape()) throw ConfigError("checkpoint lacks a compatible " + e.name);
    e.value = *a;
  }
  for (auto& e : trainer.baseline_params()) {
    if (const auto* a = ck.find(e.name)) e.value = *a;
  }
  auto load_moments = [&](Adam<Real>& opt, const std::string& prefix, std::size_t step) {
    opt.moments().clear();
    for (const auto& [name, a] : ck.arrays) {
      if (name.rfind(prefix + "m.", 0) != 0) continue;
      const std::string p = name.substr(prefix.size() + 2);
      const auto* v = ck.find(prefix + "v." + p);
      if (!v) throw CheckpointError("checkpoint lacks " + prefix + "v." + p);
      opt.moments()[p] = {a, *v};
    }
    opt.set_steps(step);
  };
  load_moments(trainer.optimizer(), "adam.", ck.meta.value("adam_step", std::size_t{0}));
  load_moments(trainer.baseline_optimizer(), "baseline_adam.", ck.meta.value("baseline_adam_step", std::size_t{0}));
  const auto norm = ck.meta.value("normalizer", nlohmann::json::object());
  trainer.normalizer().mean = norm.value("mean", 0.0);
  trainer.normalizer().variance = norm.value("variance", 1.0);
  trainer.normalizer().updates = norm.value("updates", std::size_t{0});
  trainer.schedule().minibatches = ck.meta.value("curriculum_minibatches", std::size_t{0});
  trainer.set_updates(ck.meta.value("updates", std::size_t{0}));
  if (!ck.rng_state.empty()) rng.set_state(ck.rng_state);
}

// ---------------------------------------------------------------------------
// Training run

inline nlohmann::json trace_to_json(const AttentionTrace& trace, EvalAttention mode) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < trace.read.size(); ++t) {
    steps.push_back({{"step", t}, {"read", trace.read[t]}, {"write", trace.write[t]}});
  }
  return {{"attention", eval_attention_name(mode)}, {"episode", 0}, {"steps", steps}};
}

inline void write_trace(const std::string& path, const AttentionTrace& trace, EvalAttention mode) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path + " (--trace-attention)");
  out << trace_to_json(trace, mode).dump() << '\n';
}

struct MetricsRow {
  std::size_t step = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_bce_or_acc = 0;
  double p_n = 1;
  double mean_entropy_read = 0;
  double mean_entropy_write = 0;
  double grad_norm = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,valid_loss,valid_bce_or_acc,p_n,mean_entropy_read,mean_entropy_write,grad_norm";

inline std::string format_metrics(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.step, r.train_loss, r.valid_loss,
                r.valid_bce_or_acc, r.p_n, r.mean_entropy_read, r.mean_entropy_write, r.grad_norm);
  return buf;
}

struct RunSummary {
  std::size_t updates = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  EvalStats last;
  bool numeric_failure = false;
  bool reached_target = false;
  std::string diagnostic;
  std::vector<MetricsRow> rows;
};

inline double headline_metric(const EvalStats& s, OutputKind kind) {
  return kind == OutputKind::bits ? s.bce : s.accuracy;
}

template <typename Real>
RunSummary train_run(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  Rng master(cfg.seed);
  Rng data_rng = master.split(1);
  Rng model_rng = master.split(2);
  Rng train_rng = master.split(3);
  const TaskData data = load_task(cfg, data_rng);
  Model<Real> model(model_config(cfg, data), model_rng);
  Trainer<Real> trainer(model, trainer_config(cfg), train_rng);
  const auto valid_groups = make_groups<Real>(data.valid);
  const EvalAttention eval_mode = default_eval_attention(cfg);
  const OutputKind kind = model.config().output;

  std::ofstream metrics;
  if (!cfg.metrics_out.empty()) {
    metrics.open(cfg.metrics_out, std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write " + cfg.metrics_out + " (--metrics-out)");
    metrics << kMetricsHeader << '\n';
    std::ofstream echo(cfg.metrics_out + ".config.json", std::ios::trunc);
    echo << config_to_json(cfg).dump(2) << '\n';
  } else if (!cfg.checkpoint.empty()) {
    std::ofstream echo(cfg.checkpoint + ".config.json", std::ios::trunc);
    echo << config_to_json(cfg).dump(2) << '\n';
  }

  RunSummary summary;
  std::size_t nan_streak = 0;
  double loss_sum = 0, ent_r = 0, ent_w = 0, gnorm = 0;
  std::size_t window = 0;
  double p_n = 1;
  for (std::size_t u = 1; u <= cfg.max_updates; ++u) {
    const auto groups = make_groups<Real>(data.sample(data_rng, cfg.batch));
    const StepStats s = trainer.train_step(std::span<const EpisodeBatch<Real>>(groups));
    summary.updates = u;
    if (!std::isfinite(s.loss) || !s.applied) {
      if (++nan_streak >= 3) {
        summary.numeric_failure = true;
        summary.diagnostic = "non-finite loss or gradient on 3 consecutive updates (last at update " +
                             std::to_string(u) + ", loss " + std::to_string(s.loss) + ", grad norm " +
                             std::to_string(s.grad_norm) + ")";
        log << "error: " << summary.diagnostic << '\n';
        return summary;
      }
      continue;
    }
    nan_streak = 0;
    loss_sum += s.nll;
    ent_r += s.entropy_read;
    ent_w += s.entropy_write;
    gnorm += s.grad_norm;
    p_n = s.p_n;
    ++window;

    if (u % cfg.eval_interval == 0 || u == cfg.max_updates) {
      const EvalStats ev = trainer.evaluate(valid_groups, eval_mode);
      MetricsRow row{u, window ? loss_sum / window : 0.0, ev.loss, headline_metric(ev, kind), p_n,
                     window ? ent_r / window : 0.0, window ? ent_w / window : 0.0, window ? gnorm / window : 0.0};
      summary.rows.push_back(row);
      summary.last = ev;
      if (metrics) metrics << format_metrics(row) << '\n' << std::flush;
      log << "update " << u << " train_loss " << row.train_loss << " valid_loss " << ev.loss
          << (kind == OutputKind::bits ? " valid_bce " : " valid_acc ") << row.valid_bce_or_acc << '\n';
      loss_sum = ent_r = ent_w = gnorm = 0;
      window = 0;
      if (ev.loss < summary.best_valid_loss) {
        summary.best_valid_loss = ev.loss;
        if (!cfg.checkpoint.empty()) {
          save_checkpoint(cfg.checkpoint, capture_checkpoint(cfg, trainer, data_rng, data.vocab,
                                                             {{"valid_loss", ev.loss}, {"update", u}}));
        }
      }
      if (cfg.target_bce > 0 && kind == OutputKind::bits && ev.bce < cfg.target_bce) {
        summary.reached_target = true;
        break;
      }
    }
  }
  if (!cfg.trace_attention.empty() && !valid_groups.empty()) {
    AttentionTrace trace;
    trainer.evaluate(std::span<const EpisodeBatch<Real>>(valid_groups).first(1), eval_mode, &trace);
    write_trace(cfg.trace_attention, trace, eval_mode);
  }
  log << "done updates " << summary.updates << " best_valid_loss " << summary.best_valid_loss
      << (kind == OutputKind::bits ? " valid_bce " : " valid_acc ") << headline_metric(summary.last, kind) << '\n';
  return summary;
}

// ---------------------------------------------------------------------------
// Evaluation run

struct EvalReport {
  EvalStats stats;
  OutputKind kind = OutputKind::bits;
  EvalAttention attention = EvalAttention::continuous;
  AttentionTrace trace;
  std::string split;
};


// `overrides` are config keys applied on top of the configuration stored in
// the checkpoint; shape-changing overrides surface as ConfigError from the
// parameter check.
template <typename Real>
EvalReport eval_run(const std::string& checkpoint_path, const std::map<std::string, std::string>& overrides,
                    std::optional<EvalAttention> attention, bool want_trace) {
  const auto ck = load_checkpoint<Real>(checkpoint_path);
  RunConfig cfg = config_from_json(ck.meta.at("config"));
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  validate(cfg);
  const Vocabulary vocab(ck.meta.value("vocab", std::vector<std::string>{}));
  Rng master(cfg.seed);
  Rng data_rng = master.split(1);
  const TaskData data = load_task(cfg, data_rng, cfg.is_babi() ? &vocab : nullptr);
  Model<Real> model = model_from_checkpoint(ck, model_config(cfg, data));
  TrainerConfig tc = trainer_config(cfg);
  tc.baseline = BaselineMode::moving_average;
  Rng eval_rng = master.split(5);
  Trainer<Real> trainer(model, tc, eval_rng);

  EvalReport report;
  report.kind = model.config().output;
  report.attention = attention.value_or(default_eval_attention(cfg));
  report.split = data.test.empty() ? "valid" : "test";
  const auto groups = make_groups<Real>(data.test.empty() ? data.valid : data.test);
  report.stats = trainer.evaluate(groups, report.attention, want_trace ? &report.trace : nullptr);
  return report;
}

}  // namespace dntm
