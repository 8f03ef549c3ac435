#pragma once

// GRU and feedforward controllers and one full D-NTM timestep:
//
//   s_t = tanh([x_t ; h_{t-1}] W_s + b_s)            pre-read state
//   w^r = address(s_t),  r_t = M^T w^r                (J rounds)
//   h_t = GRU([x_t ; r_t], h_{t-1})  or  sigmoid([x_t ; r_t] W_f + b_f)
//   alpha = sigmoid([h_t ; x_t] u_a + b_a)
//   cbar  = ReLU(h_t W_m + alpha * x_t W_x),  e = sigmoid(h_t W_e + b_e)
//   w^w = address(h_t),  C <- (1 - e w^w) . C + w^w cbar   (J rounds)
//   y_t = h_t W_y + b_y

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dntm/addressing.hpp"
#include "dntm/autodiff.hpp"
#include "dntm/memory.hpp"
#include "dntm/tasks.hpp"

namespace dntm {

enum class ControllerKind { gru, feedforward };
enum class OutputKind { bits, classes };
enum class FactEncoder { gru, bow };

struct ModelConfig {
  std::size_t input_dim = 0;  // dense input width
  std::size_t output_dim = 0;
  OutputKind output = OutputKind::bits;
  ControllerKind controller = ControllerKind::gru;
  std::size_t hidden = 100;
  std::size_t mem_cells = 120;
  std::size_t addr_dim = 16;
  std::size_t content_dim = 28;
  std::size_t steps = 1;
  bool use_nop = true;
  bool share_lru = false;
  AddressingOptions addressing;
  bool predict_next_input = false;

  // Text inputs: each step is a sentence encoded from word embeddings.
  bool token_inputs = false;
  std::size_t vocab = 0;
  std::size_t embed_dim = 0;
  FactEncoder encoder = FactEncoder::gru;

  std::size_t row_dim() const { return addr_dim + content_dim; }
  std::size_t x_dim() const { return token_inputs ? embed_dim : input_dim; }
  std::size_t prediction_dim() const { return token_inputs ? vocab : input_dim; }
  std::optional<std::size_t> nop_index() const {
    return use_nop ? std::optional<std::size_t>(mem_cells - 1) : std::nullopt;
  }

  void validate() const {
    if (x_dim() == 0) throw ConfigError("model: input width must be positive");
    if (output_dim == 0) throw ConfigError("model: output width must be positive");
    if (hidden == 0) throw ConfigError("model: hidden size must be positive");
    if (mem_cells < 2) throw ConfigError("model: need at least two memory cells");
    if (addr_dim == 0 || content_dim == 0) throw ConfigError("model: address and content widths must be positive");
    if (steps < 1) throw ConfigError("model: addressing steps must be at least 1");
    if (token_inputs && vocab == 0) throw ConfigError("model: token inputs need a vocabulary");
  }
};

// ---------------------------------------------------------------------------
// GRU cell

template <typename Real>
void declare_gru(ParameterStore<Real>& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    store.add(prefix + ".W_" + gate, glorot_uniform<Real>(rng, in, hidden));
    store.add(prefix + ".U_" + gate, glorot_uniform<Real>(rng, hidden, hidden));
    store.add(prefix + ".b_" + gate, Array<Real>({1, hidden}));
  }
}

template <typename Real>
struct GruParams {
  Var<Real> W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h;

  static GruParams bind(Graph<Real>& g, const ParameterStore<Real>& s, const std::string& p) {
    auto P = [&](const char* n) { return g.parameter(s, p + "." + n); };
    return {P("W_z"), P("U_z"), P("b_z"), P("W_r"), P("U_r"), P("b_r"), P("W_h"), P("U_h"), P("b_h")};
  }
};

// z = sigmoid(u W_z + h U_z + b_z), r = sigmoid(u W_r + h U_r + b_r),
// c = tanh(u W_h + (r . h) U_h + b_h), h' = (1 - z) . h + z . c.
template <typename Real>
Var<Real> gru_cell(const GruParams<Real>& p, Var<Real> u, Var<Real> h) {
  const Var<Real> z = sigmoid(matmul(u, p.W_z) + matmul(h, p.U_z) + p.b_z);
  const Var<Real> r = sigmoid(matmul(u, p.W_r) + matmul(h, p.U_r) + p.b_r);
  const Var<Real> c = tanh(matmul(u, p.W_h) + matmul(r * h, p.U_h) + p.b_h);
  return h + z * (c - h);
}

template <typename Real>
Var<Real> gru_step(const GruParams<Real>& p, Var<Real> x, Var<Real> h_prev, Var<Real> read) {
  return gru_cell(p, concat_cols<Real>({x, read}), h_prev);
}

// ---------------------------------------------------------------------------
// Feedforward controller

template <typename Real>
struct DenseParams {
  Var<Real> W, b;

  static DenseParams bind(Graph<Real>& g, const ParameterStore<Real>& s, const std::string& p) {
    return {g.parameter(s, p + ".W"), g.parameter(s, p + ".b")};
  }

  Var<Real> operator()(Var<Real> x) const { return matmul(x, W) + b; }
};

template <typename Real>
void declare_dense(ParameterStore<Real>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  store.add(prefix + ".W", glorot_uniform<Real>(rng, in, out));
  store.add(prefix + ".b", Array<Real>({1, out}));
}

template <typename Real>
Var<Real> ff_step(const DenseParams<Real>& p, Var<Real> x, Var<Real> read) {
  return sigmoid(p(concat_cols<Real>({x, read})));
}

// ---------------------------------------------------------------------------
// Candidate content, erase vector and input gate

template <typename Real>
void declare_content_heads(ParameterStore<Real>& store, const std::string& prefix, std::size_t hidden,
                           std::size_t x_dim, std::size_t content_dim, Rng& rng) {
  store.add(prefix + ".W_m", glorot_uniform<Real>(rng, hidden, content_dim));
  store.add(prefix + ".W_x", glorot_uniform<Real>(rng, x_dim, content_dim));
  store.add(prefix + ".u_alpha", glorot_uniform<Real>(rng, hidden + x_dim, 1));
  store.add(prefix + ".b_alpha", Array<Real>({1, 1}));
  store.add(prefix + ".W_e", glorot_uniform<Real>(rng, hidden, content_dim));
  store.add(prefix + ".b_e", Array<Real>({1, content_dim}));
}

template <typename Real>
struct ContentParams {
  Var<Real> W_m, W_x, u_alpha, b_alpha, W_e, b_e;

  static ContentParams bind(Graph<Real>& g, const ParameterStore<Real>& s, const std::string& p) {
    auto P = [&](const char* n) { return g.parameter(s, p + "." + n); };
    return {P("W_m"), P("W_x"), P("u_alpha"), P("b_alpha"), P("W_e"), P("b_e")};
  }
};

template <typename Real>
struct ContentOutputs {
  Var<Real> alpha;      // [B, 1] in (0, 1)
  Var<Real> candidate;  // [B, d_c] >= 0
  Var<Real> erase;      // [B, d_c] in (0, 1)
};

template <typename Real>
ContentOutputs<Real> content_heads(const ContentParams<Real>& p, Var<Real> h, Var<Real> x) {
  ContentOutputs<Real> out;
  out.alpha = sigmoid(matmul(concat_cols<Real>({h, x}), p.u_alpha) + p.b_alpha);
  out.candidate = relu(matmul(h, p.W_m) + out.alpha * matmul(x, p.W_x));
  out.erase = sigmoid(matmul(h, p.W_e) + p.b_e);
  return out;
}

// ---------------------------------------------------------------------------
// Model parameters

template <typename Real>
ParameterStore<Real> declare_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterStore<Real> s;
  const std::size_t H = cfg.hidden, X = cfg.x_dim(), D = cfg.row_dim();
  s.add("memory.address", uniform_array<Real>(rng, {cfg.mem_cells, cfg.addr_dim}, -1.0, 1.0));
  if (cfg.token_inputs) {
    s.add("encoder.embedding", uniform_array<Real>(rng, {cfg.vocab, cfg.embed_dim}, -0.1, 0.1));
    if (cfg.encoder == FactEncoder::gru) declare_gru(s, "encoder.gru", cfg.embed_dim, cfg.embed_dim, rng);
  }
  declare_dense(s, "controller.preread", X + H, H, rng);
  if (cfg.controller == ControllerKind::gru) {
    declare_gru(s, "controller.gru", X + D, H, rng);
  } else {
    declare_dense(s, "controller.ff", X + D, H, rng);
  }
  declare_head(s, "heads.read", H, D, rng);
  declare_head(s, "heads.write", H, D, rng);
  if (cfg.steps > 1) {
    declare_hop(s, "heads.read.hop", H, D, rng);
    declare_hop(s, "heads.write.hop", H, D, rng);
  }
  declare_content_heads(s, "heads.content", H, X, cfg.content_dim, rng);
  declare_dense(s, "output", H, cfg.output_dim, rng);
  if (cfg.predict_next_input) declare_dense(s, "aux.predict", H, cfg.prediction_dim(), rng);
  return s;
}

template <typename Real>
class Model {
 public:
  Model(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)), params_(declare_model<Real>(cfg_, rng)) {}

  // Adopts existing parameters; every expected name must be present with the
  // expected shape.
  Model(ModelConfig cfg, ParameterStore<Real> params) : cfg_(std::move(cfg)) {
    Rng scratch(0);
    params_ = declare_model<Real>(cfg_, scratch);
    std::string problems;
    for (auto& e : params_) {
      if (!params.contains(e.name)) {
        problems += " " + e.name + " (missing)";
        continue;
      }
      const auto& given = params.get(e.name);
      if (given.shape() != e.value.shape()) {
        problems += " " + e.name + " (expected " + to_string(e.value.shape()) + ", got " + to_string(given.shape()) + ")";
        continue;
      }
      e.value = given;
    }
    if (!problems.empty()) throw ConfigError("parameters incompatible with model config:" + problems);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore<Real>& params() noexcept { return params_; }
  const ParameterStore<Real>& params() const noexcept { return params_; }

 private:
  ModelConfig cfg_;
  ParameterStore<Real> params_;
};

// All model parameters bound to one graph.
template <typename Real>
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  Graph<Real>* graph = nullptr;
  Var<Real> address;
  DenseParams<Real> preread;
  std::optional<GruParams<Real>> gru;
  std::optional<DenseParams<Real>> ff;
  HeadParams<Real> read_head, write_head;
  std::optional<HopParams<Real>> read_hop, write_hop;
  ContentParams<Real> content;
  DenseParams<Real> output;
  std::optional<DenseParams<Real>> predict;
  Var<Real> embedding;
  std::optional<GruParams<Real>> encoder;

  static BoundModel bind(Graph<Real>& g, const Model<Real>& model) {
    const auto& cfg = model.config();
    const auto& s = model.params();
    BoundModel m;
    m.cfg = &cfg;
    m.graph = &g;
    m.address = g.parameter(s, "memory.address");
    m.preread = DenseParams<Real>::bind(g, s, "controller.preread");
    if (cfg.controller == ControllerKind::gru) {
      m.gru = GruParams<Real>::bind(g, s, "controller.gru");
    } else {
      m.ff = DenseParams<Real>::bind(g, s, "controller.ff");
    }
    m.read_head = HeadParams<Real>::bind(g, s, "heads.read");
    m.write_head = HeadParams<Real>::bind(g, s, "heads.write");
    if (cfg.steps > 1) {
      m.read_hop = HopParams<Real>::bind(g, s, "heads.read.hop");
      m.write_hop = HopParams<Real>::bind(g, s, "heads.write.hop");
    }
    m.content = ContentParams<Real>::bind(g, s, "heads.content");
    m.output = DenseParams<Real>::bind(g, s, "output");
    if (cfg.predict_next_input) m.predict = DenseParams<Real>::bind(g, s, "aux.predict");
    if (cfg.token_inputs) {
      m.embedding = g.parameter(s, "encoder.embedding");
      if (cfg.encoder == FactEncoder::gru) m.encoder = GruParams<Real>::bind(g, s, "encoder.gru");
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// One timestep

template <typename Real>
struct ControllerState {
  Var<Real> h;  // [B, d_h]
  LruState<Real> lru_read;
  LruState<Real> lru_write;  // unused when the heads share one accumulator
};

template <typename Real>
struct RunOptions {
  AttentionMode mode = AttentionMode::continuous;
  ChoiceSource<Real>* choices = nullptr;
  LruTrace<Real>* lru_trace = nullptr;
};

template <typename Real>
struct StepOutput {
  Var<Real> logits;  // [B, output_dim]
  Var<Real> h;
  Var<Real> read;    // r_t from the final read round
  ContentOutputs<Real> content;
  std::vector<AddressRound<Real>> reads;
  std::vector<AddressRound<Real>> writes;
};

template <typename Real>
struct TimestepResult {
  StepOutput<Real> output;
  ControllerState<Real> state;
  Memory<Real> memory;
};

template <typename Real>
ControllerState<Real> initial_state(const BoundModel<Real>& m, std::size_t batch) {
  return {m.graph->constant(Array<Real>({batch, m.cfg->hidden})),
          LruState<Real>::zeros(batch, m.cfg->mem_cells), LruState<Real>::zeros(batch, m.cfg->mem_cells)};
}

template <typename Real>
Memory<Real> initial_memory(const BoundModel<Real>& m, std::size_t batch) {
  return make_memory(m.address, batch, m.cfg->content_dim, m.cfg->nop_index());
}

template <typename Real>
TimestepResult<Real> dntm_timestep(const BoundModel<Real>& m, Var<Real> x, ControllerState<Real> state,
                                   Memory<Real> mem, RunOptions<Real>& opts) {
  const auto& cfg = *m.cfg;
  TimestepResult<Real> res;
  auto& out = res.output;
  LruState<Real>& lru_read = state.lru_read;
  LruState<Real>& lru_write = cfg.share_lru ? state.lru_read : state.lru_write;

  const Var<Real> pre = tanh(m.preread(concat_cols<Real>({x, state.h})));
  out.reads = multi_step_read(m.read_head, m.read_hop, pre, mem, lru_read, cfg.steps, opts.mode, opts.choices,
                              cfg.addressing, opts.lru_trace);
  out.read = out.reads.back().read;

  out.h = cfg.controller == ControllerKind::gru ? gru_step(*m.gru, x, state.h, out.read) : ff_step(*m.ff, x, out.read);
  out.content = content_heads(m.content, out.h, x);
  auto [next_mem, writes] = multi_step_write(m.write_head, m.write_hop, out.h, std::move(mem), lru_write, cfg.steps,
                                             out.content.erase, out.content.candidate, opts.mode, opts.choices,
                                             cfg.addressing, opts.lru_trace);
  out.writes = std::move(writes);
  out.logits = m.output(out.h);

  state.h = out.h;
  res.state = std::move(state);
  res.memory = std::move(next_mem);
  return res;
}

// ---------------------------------------------------------------------------
// Input encoding and whole episodes

// Sentence vector from word ids: final state of a GRU over the word
// embeddings, or a position-weighted bag of words.
template <typename Real>
Var<Real> encode_sentence(const BoundModel<Real>& m, const std::vector<std::vector<std::size_t>>& words) {
  const std::size_t B = words.size();
  const std::size_t L = words.front().size();
  for (const auto& w : words) {
    if (w.size() != L) throw ShapeError("encode_sentence", Shape{L}, Shape{w.size()});
  }
  const std::size_t E = m.cfg->embed_dim;
  auto column = [&](std::size_t j) {
    std::vector<std::size_t> ids(B);
    for (std::size_t b = 0; b < B; ++b) ids[b] = words[b][j];
    return gather_rows(m.embedding, ids);
  };
  if (m.cfg->encoder == FactEncoder::gru) {
    Var<Real> h = m.graph->constant(Array<Real>({B, E}));
    for (std::size_t j = 0; j < L; ++j) h = gru_cell(*m.encoder, column(j), h);
    return h;
  }
  // l[j, k] = (1 - j/L) - (k/E)(1 - 2j/L), with 1-based j and k.
  Var<Real> acc;
  for (std::size_t j = 0; j < L; ++j) {
    Array<Real> weight({1, E});
    const double jj = static_cast<double>(j + 1) / static_cast<double>(L);
    for (std::size_t k = 0; k < E; ++k) {
      const double kk = static_cast<double>(k + 1) / static_cast<double>(E);
      weight[k] = static_cast<Real>((1.0 - jj) - kk * (1.0 - 2.0 * jj));
    }
    const Var<Real> term = column(j) * m.graph->constant(std::move(weight));
    acc = acc.valid() ? acc + term : term;
  }
  return acc;
}

template <typename Real>
Var<Real> encode_step(const BoundModel<Real>& m, const EpisodeBatch<Real>& batch, std::size_t t) {
  if (batch.has_tokens()) return encode_sentence(m, batch.tokens.at(t));
  const auto& x = batch.inputs.at(t);
  if (x.cols() != m.cfg->input_dim) throw ShapeError("encode_step", x.shape(), Shape{x.rows(), m.cfg->input_dim});
  return m.graph->constant(x);
}

template <typename Real>
struct EpisodeForward {
  std::vector<Var<Real>> inputs;  // encoded x_t
  std::vector<StepOutput<Real>> steps;
  Memory<Real> memory;
};

template <typename Real>
EpisodeForward<Real> run_episode(const BoundModel<Real>& m, const EpisodeBatch<Real>& batch, RunOptions<Real>& opts) {
  EpisodeForward<Real> fwd;
  ControllerState<Real> state = initial_state(m, batch.batch);
  Memory<Real> mem = initial_memory(m, batch.batch);
  fwd.steps.reserve(batch.steps);
  for (std::size_t t = 0; t < batch.steps; ++t) {
    const Var<Real> x = encode_step(m, batch, t);
    auto res = dntm_timestep(m, x, std::move(state), std::move(mem), opts);
    fwd.inputs.push_back(x);
    fwd.steps.push_back(std::move(res.output));
    state = std::move(res.state);
    mem = std::move(res.memory);
  }
  fwd.memory = std::move(mem);
  return fwd;
}

}  // namespace dntm
