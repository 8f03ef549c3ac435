#pragma once

// Losses, optimizer and the training loop for continuous heads
// (backpropagation), discrete heads (REINFORCE with variance reduction) and
// the curriculum that mixes the two per minibatch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dntm/addressing.hpp"
#include "dntm/autodiff.hpp"
#include "dntm/controller.hpp"
#include "dntm/rng.hpp"
#include "dntm/tasks.hpp"

namespace dntm {

// ---------------------------------------------------------------------------
// Likelihood

template <typename Real>
struct Likelihood {
  Var<Real> per_episode;  // [B, 1], -log p(y | x)
  Var<Real> mean;         // [1, 1]
};

// -log p(y | x_{1:T}) for each episode, summed over scored steps. Bit tasks use
// independent Bernoulli outputs; classification tasks a softmax.
template <typename Real>
Likelihood<Real> nll_loss(const std::vector<Var<Real>>& logits, const EpisodeBatch<Real>& batch, OutputKind kind) {
  if (logits.size() != batch.steps) throw ShapeError("nll_loss", Shape{logits.size()}, Shape{batch.steps});
  Graph<Real>& g = *logits.front().graph();
  Var<Real> total;
  for (std::size_t t = 0; t < batch.steps; ++t) {
    const auto& mask = batch.mask[t];
    bool any = false;
    for (auto v : mask.data()) any = any || v != 0;
    if (!any) continue;
    Var<Real> step;
    if (kind == OutputKind::bits) {
      step = row_sum(bce_with_logits(logits[t], batch.targets.at(t)));
    } else {
      const auto& labels = batch.labels.at(t);
      for (std::size_t b = 0; b < labels.size(); ++b) {
        if (mask[b] != 0 && labels[b] >= logits[t].cols()) {
          throw std::out_of_range("nll_loss: target class " + std::to_string(labels[b]) + " out of range");
        }
      }
      step = -pick(log_softmax(logits[t]), labels);
    }
    step = step * g.constant(mask);
    total = total.valid() ? total + step : step;
  }
  if (!total.valid()) total = g.constant(Array<Real>({batch.batch, 1}));
  return {total, mean(total)};
}

template <typename Real>
std::vector<Var<Real>> output_logits(const EpisodeForward<Real>& fwd) {
  std::vector<Var<Real>> out;
  for (const auto& s : fwd.steps) out.push_back(s.logits);
  return out;
}

// Mean binary cross-entropy per scored bit, in nats.
template <typename Real>
double bit_bce(const EpisodeForward<Real>& fwd, const EpisodeBatch<Real>& batch) {
  double total = 0;
  std::size_t bits = 0;
  for (std::size_t t = 0; t < batch.steps; ++t) {
    const auto& logits = fwd.steps[t].logits.value();
    const auto& y = batch.targets.at(t);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      if (batch.mask[t][b] == 0) continue;
      for (std::size_t k = 0; k < y.cols(); ++k) {
        const double x = logits.at(b, k);
        total += std::max(x, 0.0) - x * y.at(b, k) + std::log1p(std::exp(-std::abs(x)));
        ++bits;
      }
    }
  }
  return bits ? total / static_cast<double>(bits) : 0.0;
}

// Fraction of scored steps whose argmax class equals the label.
template <typename Real>
double class_accuracy(const EpisodeForward<Real>& fwd, const EpisodeBatch<Real>& batch) {
  std::size_t hits = 0, count = 0;
  for (std::size_t t = 0; t < batch.steps; ++t) {
    const auto& logits = fwd.steps[t].logits.value();
    for (std::size_t b = 0; b < batch.batch; ++b) {
      if (batch.mask[t][b] == 0) continue;
      const auto row = logits.row_span(b);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hits += best == batch.labels.at(t)[b];
      ++count;
    }
  }
  return count ? static_cast<double>(hits) / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// REINFORCE

enum class HeadRole { read, write };

// Every discrete choice of an episode in the order it was made.
template <typename Real>
struct ChoiceTape {
  struct Entry {
    std::size_t step = 0;
    std::size_t round = 0;
    HeadRole head = HeadRole::read;
    std::vector<std::size_t> chosen;
    Var<Real> log_prob;  // [B, 1]
    Var<Real> entropy;   // [B, 1]
  };
  std::vector<Entry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
};

template <typename Real>
ChoiceTape<Real> build_tape(const EpisodeForward<Real>& fwd) {
  ChoiceTape<Real> tape;
  for (std::size_t t = 0; t < fwd.steps.size(); ++t) {
    const auto& s = fwd.steps[t];
    auto add = [&](const std::vector<AddressRound<Real>>& rounds, HeadRole role) {
      for (std::size_t j = 0; j < rounds.size(); ++j) {
        const auto& w = rounds[j].weights;
        if (w.mode != AttentionMode::discrete) continue;
        tape.entries.push_back({t, j, role, w.choice, w.log_prob, w.entropy});
      }
    };
    add(s.reads, HeadRole::read);
    add(s.writes, HeadRole::write);
  }
  return tape;
}

// Running mean and variance of the reward, used to centre and rescale it.
struct RewardNormalizer {
  double mean = 0.0;
  double variance = 1.0;
  double decay = 0.99;
  double eps = 1e-8;
  std::size_t updates = 0;

  double apply(double reward) const { return (reward - mean) / std::sqrt(variance + eps); }

  void update(double reward) {
    const double diff = reward - mean;
    const double step = (1.0 - decay) * diff;
    mean += step;
    variance = decay * (variance + diff * step);
    ++updates;
  }

  // Normalizes with the statistics of past rewards only, then folds the new
  // rewards in, in order.
  std::vector<double> normalize(const std::vector<double>& rewards) {
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back(apply(r));
    for (double r : rewards) update(r);
    return out;
  }
};

// Surrogate whose gradient is the REINFORCE estimator plus an entropy bonus:
//   mean_b [ nll_b - Rbar_b * sum_j log p(choice_j) - lambda_H * sum_j H(w_j) ]
// The centred reward Rbar is a constant.
template <typename Real>
Var<Real> reinforce_loss(Var<Real> nll_per_episode, const ChoiceTape<Real>& tape, const Array<Real>& centred_reward,
                         Real entropy_weight) {
  Graph<Real>& g = *nll_per_episode.graph();
  const std::size_t B = nll_per_episode.rows();
  if (centred_reward.shape() != Shape{B, 1}) throw ShapeError("reinforce_loss", centred_reward.shape(), Shape{B, 1});
  Var<Real> log_probs, entropies;
  for (const auto& e : tape.entries) {
    if (e.log_prob.rows() != B) throw ShapeError("reinforce_loss tape", e.log_prob.shape(), Shape{B, 1});
    log_probs = log_probs.valid() ? log_probs + e.log_prob : e.log_prob;
    entropies = entropies.valid() ? entropies + e.entropy : e.entropy;
  }
  Var<Real> per = nll_per_episode;
  if (log_probs.valid()) {
    per = per - g.constant(centred_reward) * log_probs;
    if (entropy_weight != 0) per = per - entropy_weight * entropies;
  }
  return mean(per);
}

// Input-based baseline: mean-pooled inputs -> tanh layer -> scalar.
template <typename Real>
void declare_baseline(ParameterStore<Real>& store, std::size_t in, std::size_t hidden, Rng& rng) {
  store.add("baseline.W1", glorot_uniform<Real>(rng, in, hidden));
  store.add("baseline.b1", Array<Real>({1, hidden}));
  store.add("baseline.W2", glorot_uniform<Real>(rng, hidden, hidden));
  store.add("baseline.b2", Array<Real>({1, hidden}));
  store.add("baseline.w_out", glorot_uniform<Real>(rng, hidden, 1));
  store.add("baseline.b_out", Array<Real>({1, 1}));
}

template <typename Real>
Var<Real> baseline_value(Graph<Real>& g, const ParameterStore<Real>& store, const Array<Real>& pooled) {
  auto P = [&](const char* n) { return g.parameter(store, n); };
  Var<Real> h = tanh(matmul(g.constant(pooled), P("baseline.W1")) + P("baseline.b1"));
  h = tanh(matmul(h, P("baseline.W2")) + P("baseline.b2"));
  return matmul(h, P("baseline.w_out")) + P("baseline.b_out");
}

template <typename Real>
Array<Real> pooled_inputs(const EpisodeForward<Real>& fwd) {
  const auto& first = fwd.inputs.front().value();
  Array<Real> out(first.shape());
  for (const auto& x : fwd.inputs) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
  }
  for (auto& v : out.storage()) v /= static_cast<Real>(fwd.inputs.size());
  return out;
}

// ---------------------------------------------------------------------------
// Curriculum

// p_n = p0 / sqrt(1 + n), where n counts completed periods of k minibatches.
struct CurriculumSchedule {
  double p0 = 1.0;
  std::size_t period = 100;
  std::size_t minibatches = 0;

  std::size_t n() const { return minibatches / period; }
  double p() const { return p0 / std::sqrt(1.0 + static_cast<double>(n())); }

  // pi_n ~ Bernoulli(p_n); true selects the continuous weights.
  bool draw(Rng& rng) const { return rng.bernoulli(p()); }
  void advance() { ++minibatches; }
};

// w = pi * wbar + (1 - pi) * wtilde with binary pi.
template <typename Real>
const AddressWeights<Real>& curriculum_mix(const AddressWeights<Real>& continuous, const AddressWeights<Real>& discrete,
                                           bool pi) {
  return pi ? continuous : discrete;
}

// ---------------------------------------------------------------------------
// Regularizers

// lambda * sum_t' (1 - mean_{t<=t'}(w^w_t) . w^r_t')^2, averaged over the batch.
// The NOP cell, when given, is left out of the inner product.
template <typename Real>
Var<Real> rw_consistency(const std::vector<Var<Real>>& reads, const std::vector<Var<Real>>& writes, Real lambda,
                         std::optional<std::size_t> nop_index = std::nullopt) {
  if (reads.size() != writes.size() || reads.empty()) {
    throw ShapeError("rw_consistency", Shape{reads.size()}, Shape{writes.size()});
  }
  Graph<Real>& g = *reads.front().graph();
  const std::size_t N = reads.front().cols();
  std::optional<Var<Real>> keep;
  if (nop_index) {
    Array<Real> mask({1, N}, Real{1});
    mask[*nop_index] = 0;
    keep = g.constant(std::move(mask));
  }
  Var<Real> running, total;
  for (std::size_t t = 0; t < reads.size(); ++t) {
    if (reads[t].shape() != writes[t].shape()) throw ShapeError("rw_consistency", reads[t].shape(), writes[t].shape());
    running = running.valid() ? running + writes[t] : writes[t];
    Var<Real> avg = running * (Real{1} / static_cast<Real>(t + 1));
    if (keep) avg = avg * *keep;
    const Var<Real> term = square(Real{1} - row_sum(avg * reads[t]));
    total = total.valid() ? total + term : term;
  }
  return lambda * mean(total);
}

// Next-input prediction penalty from per-step prediction logits. Step t
// predicts the input of step t + 1: dense inputs as independent bits, text
// inputs as the words of the next sentence (mean word NLL per step).
template <typename Real>
Var<Real> next_input_pred_loss(const std::vector<Var<Real>>& prediction_logits, const EpisodeBatch<Real>& batch) {
  if (prediction_logits.size() != batch.steps) {
    throw ShapeError("next_input_pred_loss", Shape{prediction_logits.size()}, Shape{batch.steps});
  }
  Graph<Real>& g = *prediction_logits.front().graph();
  Var<Real> total;
  for (std::size_t t = 0; t + 1 < batch.steps; ++t) {
    Var<Real> term;
    if (batch.has_tokens()) {
      const auto& next = batch.tokens[t + 1];
      const std::size_t L = next.front().size();
      const Var<Real> logp = log_softmax(prediction_logits[t]);
      for (std::size_t j = 0; j < L; ++j) {
        std::vector<std::size_t> ids(batch.batch);
        for (std::size_t b = 0; b < batch.batch; ++b) ids[b] = next[b].at(j);
        const Var<Real> nll = -pick(logp, ids);
        term = term.valid() ? term + nll : nll;
      }
      term = term * (Real{1} / static_cast<Real>(L));
    } else {
      term = row_sum(bce_with_logits(prediction_logits[t], batch.inputs[t + 1]));
    }
    total = total.valid() ? total + term : term;
  }
  if (!total.valid()) return g.constant(Array<Real>::scalar(0));
  return mean(total);
}

// ---------------------------------------------------------------------------
// Regularized objective

struct RegularizerSettings {
  bool rw = false;
  double rw_lambda = 0;
  double predict_weight = 1;
};

template <typename Real>
struct RegularizedLoss {
  Var<Real> loss;
  double rw = 0, pred = 0;
};

// Adds R_rw (when enabled) and the next-input prediction loss (when the
// model has a prediction head) to `loss`.
template <typename Real>
RegularizedLoss<Real> add_regularizers(Var<Real> loss, const BoundModel<Real>& bound, const EpisodeForward<Real>& fwd,
                                       const EpisodeBatch<Real>& batch, const RegularizerSettings& settings) {
  RegularizedLoss<Real> out;
  const auto& cfg = *bound.cfg;
  if (settings.rw) {
    std::vector<Var<Real>> reads, writes;
    for (const auto& s : fwd.steps) {
      for (std::size_t j = 0; j < s.reads.size(); ++j) {
        reads.push_back(s.reads[j].weights.w);
        writes.push_back(s.writes[j].weights.w);
      }
    }
    const Var<Real> rw = rw_consistency(reads, writes, static_cast<Real>(settings.rw_lambda), cfg.nop_index());
    out.rw = static_cast<double>(rw.item());
    loss = loss + rw;
  }
  if (cfg.predict_next_input) {
    std::vector<Var<Real>> pred_logits;
    for (const auto& s : fwd.steps) pred_logits.push_back((*bound.predict)(s.h));
    Var<Real> pred = next_input_pred_loss(pred_logits, batch);
    if (settings.predict_weight != 1.0) pred = pred * static_cast<Real>(settings.predict_weight);
    out.pred = static_cast<double>(pred.item());
    loss = loss + pred;
  }
  out.loss = loss;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // global gradient norm; <= 0 disables clipping
};

template <typename Real>
class Adam {
 public:
  struct Moments {
    Array<Real> m, v;
  };

  struct Report {
    bool applied = false;
    double grad_norm = 0;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  AdamConfig& config() noexcept { return cfg_; }
  std::size_t steps() const noexcept { return t_; }
  std::map<std::string, Moments>& moments() noexcept { return moments_; }
  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }
  void set_steps(std::size_t t) { t_ = t; }

  static double global_norm(const Gradients<Real>& grads) {
    double s = 0;
    for (const auto& [name, g] : grads) {
      for (auto v : g.data()) s += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(s);
  }

  // Applies one update for every parameter that has a gradient. Non-finite
  // gradients leave parameters and moments untouched.
  Report step(ParameterStore<Real>& params, const Gradients<Real>& grads) {
    Report r;
    r.grad_norm = global_norm(grads);
    if (!std::isfinite(r.grad_norm)) return r;
    const double scale = cfg_.clip_norm > 0 && r.grad_norm > cfg_.clip_norm ? cfg_.clip_norm / r.grad_norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& e : params) {
      if (!e.trainable) continue;
      const auto it = grads.find(e.name);
      if (it == grads.end()) continue;
      auto [mit, inserted] = moments_.try_emplace(e.name, Moments{Array<Real>(e.value.shape()), Array<Real>(e.value.shape())});
      auto& mo = mit->second;
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = static_cast<double>(it->second[i]) * scale;
        const double m = cfg_.beta1 * static_cast<double>(mo.m[i]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(mo.v[i]) + (1.0 - cfg_.beta2) * g * g;
        mo.m[i] = static_cast<Real>(m);
        mo.v[i] = static_cast<Real>(v);
        const double mhat = m / c1, vhat = v / c2;
        e.value[i] = static_cast<Real>(static_cast<double>(e.value[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    r.applied = true;
    return r;
  }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Trainer

enum class AttentionTraining { continuous, discrete, curriculum };
enum class BaselineMode { moving_average, input_based };
enum class EvalAttention { continuous, argmax, sample };

struct TrainerConfig {
  AttentionTraining attention = AttentionTraining::continuous;
  BaselineMode baseline = BaselineMode::moving_average;
  double entropy_weight = 0.01;
  double huber_delta = 1.0;
  bool rw_regularizer = false;
  double rw_lambda_start = 1.0;
  double rw_lambda_end = 0.1;
  std::size_t rw_decay_updates = 10000;
  double predict_weight = 1.0;  // used when the model has a prediction head
  std::size_t curriculum_period = 100;
  double normalizer_decay = 0.99;
  double normalizer_eps = 1e-8;
  std::size_t baseline_hidden = 32;
  AdamConfig adam;
};

struct StepStats {
  double loss = 0;        // total objective value
  double nll = 0;         // mean -log p(y | x) per episode
  double rw = 0;
  double pred = 0;
  double grad_norm = 0;
  double p_n = 1;
  double entropy_read = 0;   // mean entropy of read distributions
  double entropy_write = 0;
  bool continuous = true;
  bool applied = false;
};

struct EvalStats {
  double loss = 0;      // mean -log p(y | x) per episode
  double bce = 0;       // per scored bit (bit tasks)
  double accuracy = 0;  // per scored step (classification tasks)
  std::size_t episodes = 0;
};

// Per-step read/write weights of one episode: [step][round][cell].
struct AttentionTrace {
  std::vector<std::vector<std::vector<double>>> read;
  std::vector<std::vector<std::vector<double>>> write;
};

template <typename Real>
AttentionTrace attention_trace(const EpisodeForward<Real>& fwd, std::size_t episode = 0) {
  AttentionTrace trace;
  auto grab = [&](const std::vector<AddressRound<Real>>& rounds) {
    std::vector<std::vector<double>> out;
    for (const auto& r : rounds) {
      const auto row = r.weights.w.value().row_span(episode);
      out.emplace_back(row.begin(), row.end());
    }
    return out;
  };
  for (const auto& s : fwd.steps) {
    trace.read.push_back(grab(s.reads));
    trace.write.push_back(grab(s.writes));
  }
  return trace;
}

template <typename Real>
class Trainer {
 public:
  Trainer(Model<Real>& model, TrainerConfig cfg, Rng& rng)
      : model_(&model), cfg_(cfg), adam_(cfg.adam), baseline_adam_(cfg.adam), rng_(&rng) {
    if (!(cfg_.huber_delta > 0)) throw ConfigError("huber delta must be positive");
    if (cfg_.curriculum_period == 0) throw ConfigError("curriculum period must be positive");
    normalizer_.decay = cfg_.normalizer_decay;
    normalizer_.eps = cfg_.normalizer_eps;
    schedule_.period = cfg_.curriculum_period;
    if (cfg_.baseline == BaselineMode::input_based) {
      declare_baseline(baseline_params_, model.config().x_dim(), cfg_.baseline_hidden, rng);
    }
  }

  const TrainerConfig& config() const noexcept { return cfg_; }
  Model<Real>& model() noexcept { return *model_; }
  Adam<Real>& optimizer() noexcept { return adam_; }
  Adam<Real>& baseline_optimizer() noexcept { return baseline_adam_; }
  ParameterStore<Real>& baseline_params() noexcept { return baseline_params_; }
  RewardNormalizer& normalizer() noexcept { return normalizer_; }
  CurriculumSchedule& schedule() noexcept { return schedule_; }
  std::size_t updates() const noexcept { return updates_; }
  void set_updates(std::size_t n) { updates_ = n; }

  double rw_lambda() const {
    if (cfg_.rw_decay_updates == 0) return cfg_.rw_lambda_end;
    const double f = std::min(1.0, static_cast<double>(updates_) / static_cast<double>(cfg_.rw_decay_updates));
    return cfg_.rw_lambda_start + f * (cfg_.rw_lambda_end - cfg_.rw_lambda_start);
  }

  // One parameter update from a minibatch split into lockstep groups.
  StepStats train_step(std::span<const EpisodeBatch<Real>> groups) {
    StepStats stats;
    bool continuous = cfg_.attention == AttentionTraining::continuous;
    if (cfg_.attention == AttentionTraining::curriculum) {
      stats.p_n = schedule_.p();
      continuous = schedule_.draw(*rng_);
    } else if (cfg_.attention == AttentionTraining::discrete) {
      stats.p_n = 0;
    }
    stats.continuous = continuous;

    std::size_t total = 0;
    for (const auto& g : groups) total += g.batch;
    Gradients<Real> grads, baseline_grads;
    std::size_t read_count = 0, write_count = 0;
    for (const auto& group : groups) {
      const Real weight = static_cast<Real>(group.batch) / static_cast<Real>(total);
      auto part = objective(group, continuous);
      stats.loss += weight * part.loss.item();
      stats.nll += weight * part.nll;
      stats.rw += weight * part.rw;
      stats.pred += weight * part.pred;
      stats.entropy_read += part.entropy_read_sum;
      stats.entropy_write += part.entropy_write_sum;
      read_count += part.read_count;
      write_count += part.write_count;
      accumulate(grads, part.graph->backward(part.loss), weight);
      if (part.baseline_loss.valid()) accumulate(baseline_grads, part.graph->backward(part.baseline_loss), weight);
    }
    if (read_count) stats.entropy_read /= static_cast<double>(read_count);
    if (write_count) stats.entropy_write /= static_cast<double>(write_count);

    const auto report = adam_.step(model_->params(), grads);
    stats.grad_norm = report.grad_norm;
    stats.applied = report.applied;
    if (!baseline_grads.empty()) baseline_adam_.step(baseline_params_, baseline_grads);
    if (cfg_.attention == AttentionTraining::curriculum) schedule_.advance();
    ++updates_;
    return stats;
  }

  StepStats train_step(const EpisodeBatch<Real>& batch) { return train_step(std::span<const EpisodeBatch<Real>>(&batch, 1)); }

  EvalStats evaluate(std::span<const EpisodeBatch<Real>> groups, EvalAttention mode, AttentionTrace* trace = nullptr) {
    EvalStats out;
    double loss = 0, bce = 0, acc = 0;
    for (const auto& group : groups) {
      Graph<Real> g;
      auto bound = BoundModel<Real>::bind(g, *model_);
      auto source = mode == EvalAttention::sample ? ChoiceSource<Real>::sampler(*rng_) : ChoiceSource<Real>::argmax();
      RunOptions<Real> opts;
      opts.mode = mode == EvalAttention::continuous ? AttentionMode::continuous : AttentionMode::discrete;
      opts.choices = &source;
      const auto fwd = run_episode(bound, group, opts);
      const auto nll = nll_loss(output_logits(fwd), group, model_->config().output);
      const double w = static_cast<double>(group.batch);
      loss += w * static_cast<double>(nll.mean.item());
      if (model_->config().output == OutputKind::bits) {
        bce += w * bit_bce(fwd, group);
      } else {
        acc += w * class_accuracy(fwd, group);
      }
      out.episodes += group.batch;
      if (trace && trace->read.empty()) *trace = attention_trace(fwd);
    }
    if (out.episodes) {
      const double n = static_cast<double>(out.episodes);
      out.loss = loss / n;
      out.bce = bce / n;
      out.accuracy = acc / n;
    }
    return out;
  }

 private:
  struct Objective {
    std::unique_ptr<Graph<Real>> graph;
    Var<Real> loss;
    Var<Real> baseline_loss;
    double nll = 0, rw = 0, pred = 0;
    double entropy_read_sum = 0, entropy_write_sum = 0;
    std::size_t read_count = 0, write_count = 0;
  };

  static void accumulate(Gradients<Real>& into, const Gradients<Real>& part, Real weight) {
    for (const auto& [name, g] : part) {
      auto [it, inserted] = into.try_emplace(name, Array<Real>(g.shape()));
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += weight * g[i];
    }
  }

  Objective objective(const EpisodeBatch<Real>& batch, bool continuous) {
    Objective o;
    o.graph = std::make_unique<Graph<Real>>();
    Graph<Real>& g = *o.graph;
    const auto& cfg = model_->config();
    auto bound = BoundModel<Real>::bind(g, *model_);
    auto source = ChoiceSource<Real>::sampler(*rng_);
    RunOptions<Real> opts;
    opts.mode = continuous ? AttentionMode::continuous : AttentionMode::discrete;
    opts.choices = &source;
    const auto fwd = run_episode(bound, batch, opts);
    const auto nll = nll_loss(output_logits(fwd), batch, cfg.output);
    o.nll = static_cast<double>(nll.mean.item());

    Var<Real> loss = nll.mean;
    if (!continuous) {
      const auto tape = build_tape(fwd);
      std::vector<double> rewards(batch.batch);
      for (std::size_t b = 0; b < batch.batch; ++b) rewards[b] = -static_cast<double>(nll.per_episode.value()[b]);
      const auto normalized = normalizer_.normalize(rewards);
      Array<Real> centred({batch.batch, 1});
      for (std::size_t b = 0; b < batch.batch; ++b) centred[b] = static_cast<Real>(normalized[b]);
      if (cfg_.baseline == BaselineMode::input_based) {
        const Var<Real> predicted = baseline_value(g, baseline_params_, pooled_inputs(fwd));
        o.baseline_loss = mean(huber(g.constant(centred) - predicted, static_cast<Real>(cfg_.huber_delta)));
        for (std::size_t b = 0; b < batch.batch; ++b) centred[b] -= predicted.value()[b];
      }
      loss = reinforce_loss(nll.per_episode, tape, centred, static_cast<Real>(cfg_.entropy_weight));
      for (const auto& e : tape.entries) {
        double s = 0;
        for (auto v : e.entropy.value().data()) s += static_cast<double>(v);
        if (e.head == HeadRole::read) {
          o.entropy_read_sum += s;
          o.read_count += batch.batch;
        } else {
          o.entropy_write_sum += s;
          o.write_count += batch.batch;
        }
      }
    } else {
      for (const auto& s : fwd.steps) {
        auto tally = [&](const std::vector<AddressRound<Real>>& rounds, double& sum, std::size_t& count) {
          for (const auto& r : rounds) {
            const auto& w = r.weights.distribution.value();
            for (auto v : w.data()) {
              if (v > 0) sum -= static_cast<double>(v) * std::log(static_cast<double>(v));
            }
            count += batch.batch;
          }
        };
        tally(s.reads, o.entropy_read_sum, o.read_count);
        tally(s.writes, o.entropy_write_sum, o.write_count);
      }
    }

    const auto reg = add_regularizers(loss, bound, fwd, batch,
                                      {cfg_.rw_regularizer, rw_lambda(), cfg_.predict_weight});
    loss = reg.loss;
    o.rw = reg.rw;
    o.pred = reg.pred;
    o.loss = loss;
    return o;
  }

  Model<Real>* model_;
  TrainerConfig cfg_;
  Adam<Real> adam_;
  Adam<Real> baseline_adam_;
  Rng* rng_;
  RewardNormalizer normalizer_;
  CurriculumSchedule schedule_;
  ParameterStore<Real> baseline_params_;
  std::size_t updates_ = 0;
};

}  // namespace dntm
