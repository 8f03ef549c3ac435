#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dntm/array.hpp"
#include "dntm/rng.hpp"

namespace dntm {

// Named parameter arrays kept in insertion order. The order is the order
// parameters appear in checkpoints and in optimizer sweeps.
template <typename Real>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Array<Real> value;
    bool trainable = true;
  };

  Array<Real>& add(const std::string& name, Array<Real> value, bool trainable = true) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(value), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Array<Real>& get(const std::string& name) { return entries_.at(lookup(name)).value; }
  const Array<Real>& get(const std::string& name) const { return entries_.at(lookup(name)).value; }

  Entry& entry(const std::string& name) { return entries_.at(lookup(name)); }
  const Entry& entry(const std::string& name) const { return entries_.at(lookup(name)); }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Glorot/Xavier uniform initialization for a [fan_in, fan_out] matrix.
template <typename Real>
Array<Real> glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array<Real> out({fan_in, fan_out});
  for (auto& v : out.storage()) v = static_cast<Real>(rng.uniform(-limit, limit));
  return out;
}

template <typename Real>
Array<Real> uniform_array(Rng& rng, Shape shape, double lo, double hi) {
  Array<Real> out(std::move(shape));
  for (auto& v : out.storage()) v = static_cast<Real>(rng.uniform(lo, hi));
  return out;
}

template <typename Real>
using Gradients = std::map<std::string, Array<Real>>;

}  // namespace dntm
