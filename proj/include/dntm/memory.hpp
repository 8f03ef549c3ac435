#pragma once

// External memory M = [A ; C]: a trainable address part A shared by every
// episode and a per-episode content part C, batched as [batch, cells, width].

#include <cstddef>
#include <optional>

#include "dntm/autodiff.hpp"

namespace dntm {

template <typename Real>
struct Memory {
  Var<Real> address;  // [N, d_a], a parameter leaf
  Var<Real> content;  // [B, N, d_c]
  std::optional<std::size_t> nop_index;

  std::size_t batch() const { return content.shape()[0]; }
  std::size_t cells() const { return address.shape()[0]; }
  std::size_t address_dim() const { return address.shape()[1]; }
  std::size_t content_dim() const { return content.shape()[2]; }
  std::size_t row_dim() const { return address_dim() + content_dim(); }
};

template <typename Real>
struct WriteCommand {
  Var<Real> erase;      // [B, d_c], entries in (0, 1)
  Var<Real> weights;    // [B, N]
  Var<Real> candidate;  // [B, d_c]
};

// Episode start: zero content, address untouched.
template <typename Real>
Memory<Real> reset_content(const Memory<Real>& mem) {
  Memory<Real> out = mem;
  out.content = mem.address.graph()->constant(Array<Real>(mem.content.shape()));
  return out;
}

template <typename Real>
Memory<Real> make_memory(Var<Real> address, std::size_t batch, std::size_t content_dim,
                         std::optional<std::size_t> nop_index) {
  if (address.value().rank() != 2) throw ShapeError("make_memory", address.shape(), Shape{0, 0});
  if (nop_index && *nop_index >= address.shape()[0]) {
    throw ShapeError("make_memory", address.shape(), Shape{*nop_index});
  }
  auto& g = *address.graph();
  return {address, g.constant(Array<Real>({batch, address.shape()[0], content_dim})), nop_index};
}

// r[b] = sum_i w[b, i] * [A[i] ; C[b, i]]. Shape [B, d_a + d_c].
template <typename Real>
Var<Real> read(const Memory<Real>& mem, Var<Real> weights) {
  const std::size_t B = mem.batch(), N = mem.cells(), da = mem.address_dim(), dc = mem.content_dim();
  const auto& wv = weights.value();
  if (wv.shape() != Shape{B, N}) throw ShapeError("memory.read", wv.shape(), Shape{B, N});
  const auto& av = mem.address.value();
  const auto& cv = mem.content.value();
  const std::size_t D = da + dc;
  Array<Real> out({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    Real* r = &out.at(b, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const Real w = wv.at(b, i);
      if (w == 0) continue;
      const Real* a = &av.at(i, 0);
      const Real* c = &cv[(b * N + i) * dc];
      for (std::size_t k = 0; k < da; ++k) r[k] += w * a[k];
      for (std::size_t k = 0; k < dc; ++k) r[da + k] += w * c[k];
    }
  }
  const std::size_t wi = weights.id(), ai = mem.address.id(), ci = mem.content.id();
  return weights.graph()->record(std::move(out), {wi, ai, ci}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    const auto& wv = g.value(wi);
    const auto& av = g.value(ai);
    const auto& cv = g.value(ci);
    std::vector<Real>* gw = g.requires_grad(wi) ? &g.grad_ref(wi) : nullptr;
    std::vector<Real>* ga = g.requires_grad(ai) ? &g.grad_ref(ai) : nullptr;
    std::vector<Real>* gc = g.requires_grad(ci) ? &g.grad_ref(ci) : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const Real* gr = &gy[b * D];
      for (std::size_t i = 0; i < N; ++i) {
        const Real w = wv.at(b, i);
        const std::size_t crow = (b * N + i) * dc;
        if (gw) {
          Real s = 0;
          for (std::size_t k = 0; k < da; ++k) s += gr[k] * av.at(i, k);
          for (std::size_t k = 0; k < dc; ++k) s += gr[da + k] * cv[crow + k];
          (*gw)[b * N + i] += s;
        }
        if (ga) {
          for (std::size_t k = 0; k < da; ++k) (*ga)[i * da + k] += w * gr[k];
        }
        if (gc) {
          for (std::size_t k = 0; k < dc; ++k) (*gc)[crow + k] += w * gr[da + k];
        }
      }
    }
  });
}

// C'[b, j] = (1 - e[b] * w[b, j]) . C[b, j] + w[b, j] * cbar[b] for every row
// except the NOP row, which keeps its previous content.
template <typename Real>
Memory<Real> write(const Memory<Real>& mem, const WriteCommand<Real>& cmd) {
  const std::size_t B = mem.batch(), N = mem.cells(), dc = mem.content_dim();
  const auto& wv = cmd.weights.value();
  const auto& ev = cmd.erase.value();
  const auto& hv = cmd.candidate.value();
  if (wv.shape() != Shape{B, N}) throw ShapeError("memory.write weights", wv.shape(), Shape{B, N});
  if (ev.shape() != Shape{B, dc}) throw ShapeError("memory.write erase", ev.shape(), Shape{B, dc});
  if (hv.shape() != Shape{B, dc}) throw ShapeError("memory.write candidate", hv.shape(), Shape{B, dc});
  const auto& cv = mem.content.value();
  const std::size_t nop = mem.nop_index.value_or(N);
  Array<Real> out(cv.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t row = (b * N + j) * dc;
      const Real w = j == nop ? Real{0} : wv.at(b, j);
      for (std::size_t k = 0; k < dc; ++k) {
        out[row + k] = (Real{1} - ev.at(b, k) * w) * cv[row + k] + w * hv.at(b, k);
      }
    }
  }
  const std::size_t ci = mem.content.id(), wi = cmd.weights.id(), ei = cmd.erase.id(), hi = cmd.candidate.id();
  Memory<Real> next = mem;
  next.content = mem.content.graph()->record(std::move(out), {ci, wi, ei, hi}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    const auto& cv = g.value(ci);
    const auto& wv = g.value(wi);
    const auto& ev = g.value(ei);
    const auto& hv = g.value(hi);
    std::vector<Real>* gc = g.requires_grad(ci) ? &g.grad_ref(ci) : nullptr;
    std::vector<Real>* gw = g.requires_grad(wi) ? &g.grad_ref(wi) : nullptr;
    std::vector<Real>* ge = g.requires_grad(ei) ? &g.grad_ref(ei) : nullptr;
    std::vector<Real>* gh = g.requires_grad(hi) ? &g.grad_ref(hi) : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t row = (b * N + j) * dc;
        if (j == nop) {
          if (gc) {
            for (std::size_t k = 0; k < dc; ++k) (*gc)[row + k] += gy[row + k];
          }
          continue;
        }
        const Real w = wv.at(b, j);
        Real dw = 0;
        for (std::size_t k = 0; k < dc; ++k) {
          const Real gk = gy[row + k];
          const Real e = ev.at(b, k);
          const Real c = cv[row + k];
          if (gc) (*gc)[row + k] += gk * (Real{1} - e * w);
          if (ge) (*ge)[b * dc + k] -= gk * w * c;
          if (gh) (*gh)[b * dc + k] += gk * w;
          dw += gk * (hv.at(b, k) - e * c);
        }
        if (gw) (*gw)[b * N + j] += dw;
      }
    }
  });
  return next;
}

}  // namespace dntm
