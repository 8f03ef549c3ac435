#pragma once

// Address weight generation for the read and write heads.
//
//   k    = h W_k + b_k
//   beta = softplus(h u_beta + b_beta) + 1
//   z[i] = beta * cos_eps(k, M[i])
//   w    = softmax(z - gamma * v_prev),  gamma = sigmoid(h u_gamma + b_gamma)
//   v    = 0.1 v_prev + 0.9 z            (no gradient flows through v)
//
// Discrete heads replace w by a one-hot sample (training) or argmax (test).

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dntm/autodiff.hpp"
#include "dntm/memory.hpp"
#include "dntm/rng.hpp"

namespace dntm {

enum class AttentionMode { continuous, discrete };

struct AddressingOptions {
  double eps = 1e-7;
  bool use_lru = true;
  // Subtract the freshly updated accumulator v_t instead of v_{t-1}.
  bool lru_subtract_current = false;
  double lru_decay = 0.1;
};

// Parameter names of one head under `prefix`:
//   W_k [d_h, D], b_k [1, D], u_beta [d_h, 1], b_beta [1, 1],
//   u_gamma [d_h, 1], b_gamma [1, 1].
template <typename Real>
void declare_head(ParameterStore<Real>& store, const std::string& prefix, std::size_t state_dim,
                  std::size_t row_dim, Rng& rng) {
  store.add(prefix + ".W_k", glorot_uniform<Real>(rng, state_dim, row_dim));
  store.add(prefix + ".b_k", Array<Real>({1, row_dim}));
  store.add(prefix + ".u_beta", glorot_uniform<Real>(rng, state_dim, 1));
  store.add(prefix + ".b_beta", Array<Real>({1, 1}));
  store.add(prefix + ".u_gamma", glorot_uniform<Real>(rng, state_dim, 1));
  store.add(prefix + ".b_gamma", Array<Real>({1, 1}));
}

template <typename Real>
struct HeadParams {
  Var<Real> W_k, b_k, u_beta, b_beta, u_gamma, b_gamma;

  static HeadParams bind(Graph<Real>& g, const ParameterStore<Real>& store, const std::string& prefix) {
    return {g.parameter(store, prefix + ".W_k"),     g.parameter(store, prefix + ".b_k"),
            g.parameter(store, prefix + ".u_beta"),  g.parameter(store, prefix + ".b_beta"),
            g.parameter(store, prefix + ".u_gamma"), g.parameter(store, prefix + ".b_gamma")};
  }
};

// Intermediate-state update for multi-step addressing:
//   s_j = tanh(r_j U_r + s_{j-1} U_h).
template <typename Real>
void declare_hop(ParameterStore<Real>& store, const std::string& prefix, std::size_t state_dim,
                 std::size_t row_dim, Rng& rng) {
  store.add(prefix + ".U_r", glorot_uniform<Real>(rng, row_dim, state_dim));
  store.add(prefix + ".U_h", glorot_uniform<Real>(rng, state_dim, state_dim));
}

template <typename Real>
struct HopParams {
  Var<Real> U_r, U_h;

  static HopParams bind(Graph<Real>& g, const ParameterStore<Real>& store, const std::string& prefix) {
    return {g.parameter(store, prefix + ".U_r"), g.parameter(store, prefix + ".U_h")};
  }
};

template <typename Real>
struct LruState {
  Array<Real> v;  // [B, N]

  static LruState zeros(std::size_t batch, std::size_t cells) { return {Array<Real>({batch, cells})}; }
};

// Records the accumulator each lru_weights() call consumed so that a later
// forward pass can be replayed with identical (constant) accumulators. Used to
// check gradients of the stop-gradient path against finite differences.
template <typename Real>
struct LruTrace {
  bool replay = false;
  std::vector<Array<Real>> used;
  std::size_t cursor = 0;

  void rewind() {
    replay = true;
    cursor = 0;
  }
};

// Discrete choice policy: sample from the weights, take the argmax (lowest
// index on ties), or replay a fixed list of choices.
template <typename Real>
class ChoiceSource {
 public:
  enum class Kind { sample, argmax, forced };

  static ChoiceSource sampler(Rng& rng) { return ChoiceSource(Kind::sample, &rng); }
  static ChoiceSource argmax() { return ChoiceSource(Kind::argmax, nullptr); }
  static ChoiceSource forced(std::vector<std::vector<std::size_t>> choices) {
    ChoiceSource s(Kind::forced, nullptr);
    s.forced_ = std::move(choices);
    return s;
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t consumed() const noexcept { return cursor_; }

  std::vector<std::size_t> choose(const Array<Real>& weights) {
    const std::size_t B = weights.rows(), N = weights.cols();
    std::vector<std::size_t> out(B);
    switch (kind_) {
      case Kind::sample:
        for (std::size_t b = 0; b < B; ++b) out[b] = rng_->categorical(weights.row_span(b));
        break;
      case Kind::argmax:
        for (std::size_t b = 0; b < B; ++b) {
          const auto row = weights.row_span(b);
          out[b] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
        break;
      case Kind::forced:
        if (cursor_ >= forced_.size()) throw std::out_of_range("ChoiceSource: forced choices exhausted");
        out = forced_[cursor_];
        if (out.size() != B) throw ShapeError("ChoiceSource", Shape{out.size()}, Shape{B});
        for (auto j : out) {
          if (j >= N) throw ShapeError("ChoiceSource", Shape{j}, Shape{N});
        }
        break;
    }
    ++cursor_;
    return out;
  }

 private:
  ChoiceSource(Kind kind, Rng* rng) : kind_(kind), rng_(rng) {}

  Kind kind_;
  Rng* rng_;
  std::vector<std::vector<std::size_t>> forced_;
  std::size_t cursor_ = 0;
};

template <typename Real>
struct AddressWeights {
  Var<Real> w;                      // [B, N] weights actually used
  Var<Real> distribution;           // [B, N] continuous weights
  AttentionMode mode = AttentionMode::continuous;
  std::vector<std::size_t> choice;  // discrete only
  Var<Real> log_prob;               // [B, 1], discrete only
  Var<Real> entropy;                // [B, 1], discrete only
};

// Key vector k = h W_k + b_k. Shape [B, D].
template <typename Real>
Var<Real> key(const HeadParams<Real>& head, Var<Real> h) {
  return matmul(h, head.W_k) + head.b_k;
}

// beta = softplus(h u_beta + b_beta) + 1. Shape [B, 1].
template <typename Real>
Var<Real> sharpening(const HeadParams<Real>& head, Var<Real> h) {
  return softplus(matmul(h, head.u_beta) + head.b_beta) + Real{1};
}

// S[b, i] = k[b] . M[b, i] / (|k[b]| |M[b, i]| + eps) with M[b, i] = [A[i] ; C[b, i]].
template <typename Real>
Var<Real> cosine_scores(Var<Real> keys, const Memory<Real>& mem, Real eps) {
  const std::size_t B = mem.batch(), N = mem.cells(), da = mem.address_dim(), dc = mem.content_dim();
  const std::size_t D = da + dc;
  const auto& kv = keys.value();
  if (kv.shape() != Shape{B, D}) throw ShapeError("cosine_scores", kv.shape(), Shape{B, D});
  const auto& av = mem.address.value();
  const auto& cv = mem.content.value();

  std::vector<Real> key_norm(B), row_norm(B * N), dots(B * N);
  Array<Real> out({B, N});
  for (std::size_t b = 0; b < B; ++b) {
    const Real* k = &kv.at(b, 0);
    Real nk = 0;
    for (std::size_t d = 0; d < D; ++d) nk += k[d] * k[d];
    key_norm[b] = std::sqrt(nk);
    for (std::size_t i = 0; i < N; ++i) {
      const Real* a = &av.at(i, 0);
      const Real* c = &cv[(b * N + i) * dc];
      Real dot = 0, nm = 0;
      for (std::size_t d = 0; d < da; ++d) {
        dot += k[d] * a[d];
        nm += a[d] * a[d];
      }
      for (std::size_t d = 0; d < dc; ++d) {
        dot += k[da + d] * c[d];
        nm += c[d] * c[d];
      }
      row_norm[b * N + i] = std::sqrt(nm);
      dots[b * N + i] = dot;
      out.at(b, i) = dot / (key_norm[b] * row_norm[b * N + i] + eps);
    }
  }
  const std::size_t ki = keys.id(), ai = mem.address.id(), ci = mem.content.id();
  return keys.graph()->record(std::move(out), {ki, ai, ci}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    const auto& kv = g.value(ki);
    const auto& av = g.value(ai);
    const auto& cv = g.value(ci);
    std::vector<Real>* gk = g.requires_grad(ki) ? &g.grad_ref(ki) : nullptr;
    std::vector<Real>* ga = g.requires_grad(ai) ? &g.grad_ref(ai) : nullptr;
    std::vector<Real>* gc = g.requires_grad(ci) ? &g.grad_ref(ci) : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const Real* k = &kv.at(b, 0);
      const Real nk = key_norm[b];
      for (std::size_t i = 0; i < N; ++i) {
        const Real gs = gy[b * N + i];
        if (gs == 0) continue;
        const Real nm = row_norm[b * N + i];
        const Real den = nk * nm + eps;
        const Real dot = dots[b * N + i];
        // dS/dk = m / den - dot * nm / den^2 * k / |k|, and symmetrically for m.
        const Real ck = nk > 0 ? dot * nm / (den * den * nk) : Real{0};
        const Real cm = nm > 0 ? dot * nk / (den * den * nm) : Real{0};
        const Real* a = &av.at(i, 0);
        const std::size_t crow = (b * N + i) * dc;
        for (std::size_t d = 0; d < da; ++d) {
          if (gk) (*gk)[b * D + d] += gs * (a[d] / den - ck * k[d]);
          if (ga) (*ga)[i * da + d] += gs * (k[d] / den - cm * a[d]);
        }
        for (std::size_t d = 0; d < dc; ++d) {
          const Real c = cv[crow + d];
          if (gk) (*gk)[b * D + da + d] += gs * (c / den - ck * k[da + d]);
          if (gc) (*gc)[crow + d] += gs * (k[da + d] / den - cm * c);
        }
      }
    }
  });
}

// Logits z = beta * S(k, M). Shape [B, N].
template <typename Real>
Var<Real> score(const HeadParams<Real>& head, Var<Real> h, const Memory<Real>& mem, Var<Real> beta,
                Real eps = Real(1e-7)) {
  return cosine_scores(key(head, h), mem, eps) * beta;
}

template <typename Real>
struct LruResult {
  Var<Real> weights;  // [B, N] on the simplex
  Var<Real> gamma;    // [B, 1]
  LruState<Real> next;
};

template <typename Real>
LruResult<Real> lru_weights(Var<Real> z, const LruState<Real>& lru, const HeadParams<Real>& head, Var<Real> h,
                            const AddressingOptions& opts = {}, LruTrace<Real>* trace = nullptr) {
  auto& g = *z.graph();
  const auto& zv = z.value();
  if (lru.v.shape() != zv.shape()) throw ShapeError("lru_weights", zv.shape(), lru.v.shape());
  const Real decay = static_cast<Real>(opts.lru_decay);

  Array<Real> prev = lru.v;
  if (trace) {
    if (trace->replay) {
      prev = trace->used.at(trace->cursor++);
    } else {
      trace->used.push_back(prev);
    }
  }
  LruState<Real> next{Array<Real>(zv.shape())};
  for (std::size_t i = 0; i < zv.size(); ++i) next.v[i] = decay * prev[i] + (Real{1} - decay) * zv[i];

  Var<Real> gamma = sigmoid(matmul(h, head.u_gamma) + head.b_gamma);
  if (!opts.use_lru) return {softmax(z), gamma, std::move(next)};
  const Var<Real> v = g.constant(opts.lru_subtract_current ? next.v : prev);
  return {softmax(z - gamma * v), gamma, std::move(next)};
}

// -sum_i w_i log w_i for each row. Shape [B, 1].
template <typename Real>
Var<Real> entropy(Var<Real> w) {
  return -row_sum(w * log(w));
}

// One-hot weights drawn from `weights`, with the log-probability of each
// choice and the entropy of the distribution recorded on the graph.
template <typename Real>
AddressWeights<Real> discretize(Var<Real> weights, ChoiceSource<Real>& source) {
  const auto& wv = weights.value();
  if (!wv.all_finite()) throw std::domain_error("discretize: non-finite address weights");
  AddressWeights<Real> out;
  out.mode = AttentionMode::discrete;
  out.distribution = weights;
  out.choice = source.choose(wv);
  Array<Real> onehot(wv.shape());
  for (std::size_t b = 0; b < out.choice.size(); ++b) onehot.at(b, out.choice[b]) = Real{1};
  out.w = weights.graph()->constant(std::move(onehot));
  out.log_prob = log(pick(weights, out.choice));
  out.entropy = entropy(weights);
  return out;
}

template <typename Real>
AddressWeights<Real> continuous_weights(Var<Real> weights) {
  AddressWeights<Real> out;
  out.w = weights;
  out.distribution = weights;
  return out;
}

// Per-round diagnostics shared by read and write addressing.
template <typename Real>
struct AddressRound {
  AddressWeights<Real> weights;
  Var<Real> beta;
  Var<Real> gamma;
  Var<Real> read;  // row read at the attended location(s)
};

// Common per-round addressing: logits from `state`, LRU correction and, for
// discrete heads, the one-hot choice.
template <typename Real>
AddressRound<Real> address_once(const HeadParams<Real>& head, Var<Real> state, const Memory<Real>& mem,
                                LruState<Real>& lru, AttentionMode mode, ChoiceSource<Real>* source,
                                const AddressingOptions& opts, LruTrace<Real>* trace) {
  AddressRound<Real> round;
  round.beta = sharpening(head, state);
  const Var<Real> z = score(head, state, mem, round.beta, static_cast<Real>(opts.eps));
  auto lr = lru_weights(z, lru, head, state, opts, trace);
  lru = std::move(lr.next);
  round.gamma = lr.gamma;
  if (mode == AttentionMode::discrete) {
    if (!source) throw std::invalid_argument("address_once: discrete mode needs a choice source");
    round.weights = discretize(lr.weights, *source);
  } else {
    round.weights = continuous_weights(lr.weights);
  }
  return round;
}

// J read rounds. Round j addresses from s_{j-1} (s_0 = state) and reads r_j;
// the next intermediate state is s_j = tanh(r_j U_r + s_{j-1} U_h).
template <typename Real>
std::vector<AddressRound<Real>> multi_step_read(const HeadParams<Real>& head, const std::optional<HopParams<Real>>& hop,
                                                Var<Real> state, const Memory<Real>& mem, LruState<Real>& lru,
                                                std::size_t steps, AttentionMode mode, ChoiceSource<Real>* source,
                                                const AddressingOptions& opts = {}, LruTrace<Real>* trace = nullptr) {
  if (steps < 1) throw ConfigError("multi_step: step count must be at least 1");
  if (steps > 1 && !hop) throw ConfigError("multi_step: hop parameters required for more than one step");
  std::vector<AddressRound<Real>> rounds;
  rounds.reserve(steps);
  Var<Real> s = state;
  for (std::size_t j = 0; j < steps; ++j) {
    auto round = address_once(head, s, mem, lru, mode, source, opts, trace);
    round.read = read(mem, round.weights.w);
    if (j + 1 < steps) s = tanh(matmul(round.read, hop->U_r) + matmul(s, hop->U_h));
    rounds.push_back(std::move(round));
  }
  return rounds;
}

// J write rounds, applied in order with the same erase and candidate vectors.
// Round j addresses from g_{j-1} (g_0 = state) on the memory left by round
// j-1; g_j = tanh(r'_j U_r + g_{j-1} U_h) where r'_j is the row just written.
template <typename Real>
std::pair<Memory<Real>, std::vector<AddressRound<Real>>> multi_step_write(
    const HeadParams<Real>& head, const std::optional<HopParams<Real>>& hop, Var<Real> state, Memory<Real> mem,
    LruState<Real>& lru, std::size_t steps, Var<Real> erase, Var<Real> candidate, AttentionMode mode,
    ChoiceSource<Real>* source, const AddressingOptions& opts = {}, LruTrace<Real>* trace = nullptr) {
  if (steps < 1) throw ConfigError("multi_step: step count must be at least 1");
  if (steps > 1 && !hop) throw ConfigError("multi_step: hop parameters required for more than one step");
  std::vector<AddressRound<Real>> rounds;
  rounds.reserve(steps);
  Var<Real> s = state;
  for (std::size_t j = 0; j < steps; ++j) {
    auto round = address_once(head, s, mem, lru, mode, source, opts, trace);
    mem = write(mem, WriteCommand<Real>{erase, round.weights.w, candidate});
    if (j + 1 < steps) {
      round.read = read(mem, round.weights.w);
      s = tanh(matmul(round.read, hop->U_r) + matmul(s, hop->U_h));
    }
    rounds.push_back(std::move(round));
  }
  return {std::move(mem), std::move(rounds)};
}

}  // namespace dntm
